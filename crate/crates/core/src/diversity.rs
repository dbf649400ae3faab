//! Intra-cluster diversity: Gaussian-kernel affinity graphs over each
//! cluster's samples and greedy removal of the most redundant samples.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::polsar::{extract_patch, patch_mean_coherency, CoherencyMatrix, PatchTensor, PolSarScene, Regularized};
use crate::rng::indexed_rng;
use crate::wishart::{regularized_distance, ClusterModel};

/// Gaussian kernel of the revised Wishart distance, `exp(−d²/(2γ²))`.
pub fn affinity(tp: &CoherencyMatrix, tq: &CoherencyMatrix, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    Ok(kernel(regularized_distance(&Regularized::new(tp)?, &Regularized::new(tq)?)?, gamma))
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("gamma must be > 0, got {gamma}")))
    }
}

fn kernel(d: f64, gamma: f64) -> f64 {
    // Floored so far-apart pairs stay inside (0, 1] instead of underflowing to 0.
    (-(d * d) / (2.0 * gamma * gamma)).exp().max(f64::MIN_POSITIVE)
}

/// Fully connected affinity graph over the samples of one cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityGraph {
    node_ids: Vec<usize>,
    affinity: Vec<f64>,
}

impl AffinityGraph {
    /// Builds a graph from an explicit symmetric matrix (row-major, n×n).
    pub fn from_matrix(node_ids: Vec<usize>, affinity: Vec<f64>) -> Result<Self> {
        let n = node_ids.len();
        if affinity.len() != n * n {
            return Err(Error::shape(format!("{n} nodes need a {n}x{n} affinity matrix")));
        }
        for p in 0..n {
            if affinity[p * n + p] != 1.0 {
                return Err(Error::invalid("affinity diagonal must be 1"));
            }
            for q in 0..n {
                let a = affinity[p * n + q];
                if !(a > 0.0 && a <= 1.0) || a != affinity[q * n + p] {
                    return Err(Error::invalid(format!("affinity ({p}, {q}) = {a} not symmetric in (0, 1]")));
                }
            }
        }
        Ok(AffinityGraph { node_ids, affinity })
    }

    pub fn len(&self) -> usize {
        self.node_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_ids.is_empty()
    }

    pub fn node_ids(&self) -> &[usize] {
        &self.node_ids
    }

    pub fn get(&self, p: usize, q: usize) -> f64 {
        self.affinity[p * self.len() + q]
    }

    pub fn matrix(&self) -> &[f64] {
        &self.affinity
    }
}

/// Computes the upper triangle of the affinity matrix and mirrors it.
pub fn build_affinity_graph(node_ids: Vec<usize>, samples: &[CoherencyMatrix], gamma: f64) -> Result<AffinityGraph> {
    check_gamma(gamma)?;
    if node_ids.len() != samples.len() {
        return Err(Error::shape("one node id per sample required"));
    }
    let n = samples.len();
    let reg: Vec<Regularized> = samples.iter().map(Regularized::new).collect::<Result<_>>()?;
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|p| {
            (p + 1..n)
                .map(|q| regularized_distance(&reg[p], &reg[q]).map(|d| kernel(d, gamma)))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let mut affinity = vec![1.0; n * n];
    for (p, row) in rows.iter().enumerate() {
        for (off, &a) in row.iter().enumerate() {
            let q = p + 1 + off;
            affinity[p * n + q] = a;
            affinity[q * n + p] = a;
        }
    }
    Ok(AffinityGraph { node_ids, affinity })
}

/// One removal made while pruning: the then-maximal edge (local indices,
/// `p < q`), its affinity, and which endpoint was dropped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Removal {
    pub edge: (usize, usize),
    pub affinity: f64,
    pub removed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneOutcome {
    /// Retained node ids, ascending.
    pub retained: Vec<usize>,
    pub removals: Vec<Removal>,
}

/// Repeatedly locates the strongest remaining edge (ties: smallest `(p, q)`)
/// and drops one of its endpoints on a fair coin, until `m` nodes remain.
pub fn prune_cluster<R: Rng + ?Sized>(graph: &AffinityGraph, m: usize, rng: &mut R) -> Result<Vec<usize>> {
    Ok(prune_cluster_audited(graph, m, rng)?.retained)
}

pub fn prune_cluster_audited<R: Rng + ?Sized>(graph: &AffinityGraph, m: usize, rng: &mut R) -> Result<PruneOutcome> {
    if m == 0 {
        return Err(Error::invalid("retain count M must be >= 1"));
    }
    let n = graph.len();
    let mut alive = vec![true; n];
    // best[p] = strongest edge (p, q) with q > p alive; smallest q among equals.
    let row_best = |p: usize, alive: &[bool]| -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for q in p + 1..n {
            if alive[q] {
                let a = graph.get(p, q);
                if best.is_none_or(|(b, _)| a > b) {
                    best = Some((a, q));
                }
            }
        }
        best
    };
    let mut best: Vec<Option<(f64, usize)>> = (0..n).map(|p| row_best(p, &alive)).collect();
    let mut removals = Vec::with_capacity(n.saturating_sub(m));
    let mut remaining = n;
    while remaining > m {
        let mut top: Option<(f64, usize, usize)> = None;
        for (p, b) in best.iter().enumerate() {
            if let (true, Some((a, q))) = (alive[p], *b) {
                if top.is_none_or(|(t, _, _)| a > t) {
                    top = Some((a, p, q));
                }
            }
        }
        let (a, p, q) = top.expect("more than one node alive implies an edge");
        let removed = if rng.random_bool(0.5) { p } else { q };
        alive[removed] = false;
        remaining -= 1;
        removals.push(Removal { edge: (p, q), affinity: a, removed });
        best[removed] = None;
        for r in 0..removed {
            if alive[r] && best[r].is_some_and(|(_, q)| q == removed) {
                best[r] = row_best(r, &alive);
            }
        }
    }
    let retained = (0..n).filter(|&i| alive[i]).map(|i| graph.node_ids[i]).collect();
    Ok(PruneOutcome { retained, removals })
}

/// Candidate sample centres on a regular grid with the given stride.
pub fn candidate_grid(height: usize, width: usize, stride: usize) -> Vec<(usize, usize)> {
    let stride = stride.max(1);
    let (r0, c0) = ((stride / 2).min(height.saturating_sub(1)), (stride / 2).min(width.saturating_sub(1)));
    (r0..height)
        .step_by(stride)
        .flat_map(|r| (c0..width).step_by(stride).map(move |c| (r, c)))
        .collect()
}

/// Clustering representatives: the boxcar-mean coherency over each
/// candidate's patch window.
pub fn candidate_samples(scene: &PolSarScene, positions: &[(usize, usize)], patch_size: usize) -> Result<Vec<CoherencyMatrix>> {
    positions
        .par_iter()
        .map(|&(r, c)| patch_mean_coherency(scene, r, c, patch_size))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Provenance {
    pub row: usize,
    pub col: usize,
    pub cluster: usize,
}

/// Unlabeled anchors for contrastive pretraining.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainDataset {
    pub patches: Vec<PatchTensor>,
    pub provenance: Vec<Provenance>,
    pub per_cluster_target: usize,
}

impl PretrainDataset {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    /// CSV with header `sample_id,row,col,cluster_id`.
    pub fn write_manifest<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "sample_id,row,col,cluster_id")?;
        for (i, p) in self.provenance.iter().enumerate() {
            writeln!(w, "{i},{},{},{}", p.row, p.col, p.cluster)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CollectParams {
    pub gamma: f64,
    pub per_cluster: usize,
    pub patch_size: usize,
    pub seed: u64,
}

/// Builds and prunes one graph per cluster, then crops the anchor patches of
/// the retained samples. Cluster `i` prunes with its own substream, so the
/// result does not depend on scheduling.
pub fn collect_dataset(
    scene: &PolSarScene,
    positions: &[(usize, usize)],
    samples: &[CoherencyMatrix],
    model: &ClusterModel,
    params: &CollectParams,
) -> Result<PretrainDataset> {
    if positions.len() != samples.len() || samples.len() != model.assignments.len() {
        return Err(Error::shape("positions, samples and assignments must align"));
    }
    let retained: Vec<Vec<usize>> = model
        .members()
        .into_par_iter()
        .enumerate()
        .map(|(cluster, ids)| {
            let cluster_samples: Vec<CoherencyMatrix> = ids.iter().map(|&i| samples[i]).collect();
            let graph = build_affinity_graph(ids, &cluster_samples, params.gamma)?;
            let mut rng = indexed_rng(params.seed, "prune", cluster as u64);
            prune_cluster(&graph, params.per_cluster, &mut rng)
        })
        .collect::<Result<_>>()?;
    let mut provenance = Vec::new();
    for (cluster, ids) in retained.iter().enumerate() {
        for &i in ids {
            let (row, col) = positions[i];
            provenance.push(Provenance { row, col, cluster });
        }
    }
    let patches = provenance
        .par_iter()
        .map(|p| extract_patch(scene, p.row, p.col, params.patch_size))
        .collect::<Result<_>>()?;
    Ok(PretrainDataset { patches, provenance, per_cluster_target: params.per_cluster })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stage_rng;
    use crate::wishart::revised_wishart_distance;

    #[test]
    fn self_affinity_is_one() {
        let t = CoherencyMatrix::diag(2.0, 1.0, 0.5);
        assert_eq!(affinity(&t, &t, 0.42).unwrap(), 1.0);
        assert!(affinity(&t, &t, 0.0).is_err());
    }

    #[test]
    fn distance_of_gamma_root_two_gives_inverse_e() {
        // d(diag(a,1,1), I) = (a + 1/a)/2 - 1; choose gamma so that d = gamma * sqrt(2)
        let t = CoherencyMatrix::diag(2.0, 1.0, 1.0);
        let d = revised_wishart_distance(&t, &CoherencyMatrix::identity()).unwrap();
        let gamma = d / 2f64.sqrt();
        let a = affinity(&t, &CoherencyMatrix::identity(), gamma).unwrap();
        assert!((a - (-1f64).exp()).abs() < 1e-15);
        assert!((a - 0.367879).abs() < 1e-6);
    }

    #[test]
    fn small_graphs() {
        let t = CoherencyMatrix::identity();
        let g = build_affinity_graph(vec![4], &[t], 0.42).unwrap();
        assert_eq!(g.matrix(), &[1.0]);
        let g = build_affinity_graph(vec![0, 1, 2], &[t; 3], 0.42).unwrap();
        assert_eq!(g.matrix(), &[1.0; 9]);
    }

    #[test]
    fn retain_all_when_small() {
        let g = AffinityGraph::from_matrix(vec![3, 5], vec![1.0, 0.5, 0.5, 1.0]).unwrap();
        let mut rng = stage_rng(1, "p");
        assert_eq!(prune_cluster(&g, 2, &mut rng).unwrap(), vec![3, 5]);
        assert_eq!(prune_cluster(&g, 7, &mut rng).unwrap(), vec![3, 5]);
        assert!(prune_cluster(&g, 0, &mut rng).is_err());
    }

    #[test]
    fn three_node_example_keeps_node_three() {
        let m = vec![1.0, 0.9, 0.2, 0.9, 1.0, 0.1, 0.2, 0.1, 1.0];
        let g = AffinityGraph::from_matrix(vec![1, 2, 3], m).unwrap();
        let mut seen = std::collections::BTreeSet::new();
        for seed in 0..64 {
            let mut rng = stage_rng(seed, "p");
            let kept = prune_cluster(&g, 2, &mut rng).unwrap();
            assert!(kept == vec![1, 3] || kept == vec![2, 3], "{kept:?}");
            seen.insert(kept);
        }
        assert_eq!(seen.len(), 2, "both coin outcomes occur");
    }

    #[test]
    fn grid() {
        assert_eq!(candidate_grid(4, 4, 2), vec![(1, 1), (1, 3), (3, 1), (3, 3)]);
        assert_eq!(candidate_grid(2, 3, 1).len(), 6);
    }
}
