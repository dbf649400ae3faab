//! Revised Wishart distance and unsupervised K-prototype clustering.

use std::io::Write;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::polsar::{trace_product, CoherencyMatrix, Regularized};

const DIM: f64 = 3.0;

/// `½·tr(T V⁻¹ + V T⁻¹) − 3`, symmetric and zero on the diagonal.
pub fn revised_wishart_distance(t: &CoherencyMatrix, v: &CoherencyMatrix) -> Result<f64> {
    regularized_distance(&Regularized::new(t)?, &Regularized::new(v)?)
}

/// Distance between two pre-inverted matrices.
pub fn regularized_distance(t: &Regularized, v: &Regularized) -> Result<f64> {
    let d = 0.5 * (trace_product(&t.matrix, &v.inverse) + trace_product(&v.matrix, &t.inverse)) - DIM;
    if d.is_finite() {
        Ok(d)
    } else {
        Err(Error::DistanceOverflow)
    }
}

fn regularize_all(items: &[CoherencyMatrix]) -> Result<Vec<Regularized>> {
    items.par_iter().map(Regularized::new).collect()
}

fn argmin(t: &Regularized, prototypes: &[Regularized]) -> Result<(usize, f64)> {
    let mut best = (0, f64::INFINITY);
    for (i, p) in prototypes.iter().enumerate() {
        let d = regularized_distance(t, p)?;
        if d < best.1 {
            best = (i, d);
        }
    }
    Ok(best)
}

/// Index of the nearest prototype; ties go to the lowest index.
pub fn assign_cluster(t: &CoherencyMatrix, prototypes: &[CoherencyMatrix]) -> Result<usize> {
    if prototypes.is_empty() {
        return Err(Error::invalid("empty prototype list"));
    }
    let protos = regularize_all(prototypes)?;
    Ok(argmin(&Regularized::new(t)?, &protos)?.0)
}

/// Recomputes each prototype as the arithmetic mean of its members.
///
/// An empty cluster is re-seeded with the sample farthest from its current
/// prototype (samples already used for re-seeding are skipped).
pub fn update_prototypes(
    samples: &[CoherencyMatrix],
    assignments: &[usize],
    previous: &[CoherencyMatrix],
) -> Result<Vec<CoherencyMatrix>> {
    if samples.len() != assignments.len() {
        return Err(Error::shape("one assignment per sample required"));
    }
    let k = previous.len();
    let mut sums = vec![CoherencyMatrix::ZERO; k];
    let mut counts = vec![0usize; k];
    for (s, &a) in samples.iter().zip(assignments) {
        if a >= k {
            return Err(Error::invalid(format!("assignment {a} >= {k} clusters")));
        }
        sums[a].add_assign(s);
        counts[a] += 1;
    }
    let mut out: Vec<CoherencyMatrix> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c > 0 { s.scaled(1.0 / c as f64) } else { CoherencyMatrix::ZERO })
        .collect();
    if counts.contains(&0) {
        let reg_samples = regularize_all(samples)?;
        let reg_prev = regularize_all(previous)?;
        let mut spread: Vec<(usize, f64)> = reg_samples
            .par_iter()
            .zip(assignments.par_iter())
            .enumerate()
            .map(|(i, (s, &a))| regularized_distance(s, &reg_prev[a]).map(|d| (i, d)))
            .collect::<Result<_>>()?;
        // farthest first, lowest index among equals
        spread.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut donors = spread.into_iter().map(|(i, _)| i);
        for (proto, _) in out.iter_mut().zip(&counts).filter(|(_, &c)| c == 0) {
            let donor = donors.next().ok_or_else(|| Error::invalid("not enough samples to re-seed"))?;
            *proto = samples[donor];
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub prototypes: Vec<CoherencyMatrix>,
    pub assignments: Vec<usize>,
    /// Distance from each sample to its assigned prototype.
    pub distances: Vec<f64>,
    pub iterations_run: usize,
    pub converged: bool,
}

impl ClusterModel {
    pub fn num_clusters(&self) -> usize {
        self.prototypes.len()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_clusters()];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }

    /// Sample indices of each cluster, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut m = vec![Vec::new(); self.num_clusters()];
        for (i, &a) in self.assignments.iter().enumerate() {
            m[a].push(i);
        }
        m
    }

    /// CSV with header `sample_index,cluster_index,distance_to_prototype`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "sample_index,cluster_index,distance_to_prototype")?;
        for (i, (a, d)) in self.assignments.iter().zip(&self.distances).enumerate() {
            writeln!(w, "{i},{a},{d:.12e}")?;
        }
        Ok(())
    }
}

fn assign_all(samples: &[Regularized], prototypes: &[CoherencyMatrix]) -> Result<(Vec<usize>, Vec<f64>)> {
    let protos = regularize_all(prototypes)?;
    let pairs: Vec<(usize, f64)> = samples.par_iter().map(|s| argmin(s, &protos)).collect::<Result<_>>()?;
    Ok(pairs.into_iter().unzip())
}

fn has_empty(assignments: &[usize], k: usize) -> bool {
    let mut seen = vec![false; k];
    assignments.iter().for_each(|&a| seen[a] = true);
    seen.contains(&false)
}

/// Unsupervised Wishart clustering: alternate nearest-prototype assignment
/// and mean updates until assignments stop changing or `max_iter` updates
/// have run. The returned assignments are exact argmins against the returned
/// prototypes.
pub fn wishart_cluster<R: Rng + ?Sized>(
    samples: &[CoherencyMatrix],
    k: usize,
    max_iter: usize,
    rng: &mut R,
) -> Result<ClusterModel> {
    if k == 0 {
        return Err(Error::invalid("number of clusters must be >= 1"));
    }
    if k > samples.len() {
        return Err(Error::invalid(format!("{k} clusters requested for {} samples", samples.len())));
    }
    if max_iter == 0 {
        return Err(Error::invalid("max_iter must be >= 1"));
    }
    let reg = regularize_all(samples)?;
    let mut seeds = sample_indices(rng, samples.len(), k).into_vec();
    seeds.sort_unstable();
    let mut prototypes: Vec<CoherencyMatrix> = seeds.iter().map(|&i| samples[i]).collect();
    let (mut assignments, mut distances) = assign_all(&reg, &prototypes)?;
    let mut iterations_run = 0;
    let mut converged = false;
    while iterations_run < max_iter {
        prototypes = update_prototypes(samples, &assignments, &prototypes)?;
        iterations_run += 1;
        let (next, dist) = assign_all(&reg, &prototypes)?;
        let stable = next == assignments;
        assignments = next;
        distances = dist;
        if stable && !has_empty(&assignments, k) {
            converged = true;
            break;
        }
        log::debug!("wishart iteration {iterations_run}");
    }
    // Out of iterations with an empty cluster left over: re-seed and reassign.
    let mut repairs = 0;
    while has_empty(&assignments, k) {
        if repairs == k {
            return Err(Error::invalid("could not populate every cluster"));
        }
        prototypes = update_prototypes(samples, &assignments, &prototypes)?;
        (assignments, distances) = assign_all(&reg, &prototypes)?;
        repairs += 1;
    }
    Ok(ClusterModel { prototypes, assignments, distances, iterations_run, converged })
}
