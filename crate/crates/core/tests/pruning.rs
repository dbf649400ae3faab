mod common;

use common::random_psd;
use pclnet_core::diversity::{
    affinity, build_affinity_graph, candidate_samples, collect_dataset, prune_cluster, prune_cluster_audited, AffinityGraph,
    CollectParams, Removal,
};
use pclnet_core::polsar::{CoherencyMatrix, PolSarScene};
use pclnet_core::rng::stage_rng;
use pclnet_core::wishart::{revised_wishart_distance, ClusterModel};
use rand::{Rng, RngCore};

/// Feeds a fixed coin sequence to `random_bool(0.5)`: `true` is produced by a
/// zero word, `false` by an all-ones word.
struct ScriptedCoins {
    coins: Vec<bool>,
    next: usize,
}

impl RngCore for ScriptedCoins {
    fn next_u32(&mut self) -> u32 {
        self.next_u64() as u32
    }

    fn next_u64(&mut self) -> u64 {
        let c = self.coins[self.next];
        self.next += 1;
        if c {
            0
        } else {
            u64::MAX
        }
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        dst.fill(0);
    }
}

/// Straightforward rebuild-and-scan pruning driven by an explicit coin list:
/// `true` removes the smaller endpoint.
fn reference_prune(graph: &AffinityGraph, m: usize, coins: &[bool]) -> (Vec<usize>, Vec<Removal>) {
    let mut alive: Vec<usize> = (0..graph.len()).collect();
    let mut log = Vec::new();
    let mut coin = coins.iter();
    while alive.len() > m {
        let mut best: Option<(f64, usize, usize)> = None;
        for (i, &p) in alive.iter().enumerate() {
            for &q in &alive[i + 1..] {
                let a = graph.get(p, q);
                if best.is_none_or(|(b, _, _)| a > b) {
                    best = Some((a, p, q));
                }
            }
        }
        let (a, p, q) = best.unwrap();
        let removed = if *coin.next().unwrap() { p } else { q };
        alive.retain(|&x| x != removed);
        log.push(Removal { edge: (p, q), affinity: a, removed });
    }
    (alive.iter().map(|&i| graph.node_ids()[i]).collect(), log)
}

fn random_graph<R: Rng>(rng: &mut R, n: usize, ties: bool) -> AffinityGraph {
    let mut a = vec![1.0; n * n];
    for p in 0..n {
        for q in p + 1..n {
            let v = if ties { f64::from(rng.random_range(1..4u8)) / 4.0 } else { rng.random_range(0.01..1.0) };
            a[p * n + q] = v;
            a[q * n + p] = v;
        }
    }
    AffinityGraph::from_matrix((100..100 + n).collect(), a).unwrap()
}

#[test]
fn scripted_coins_drive_random_bool() {
    let mut r = ScriptedCoins { coins: vec![true, false, true], next: 0 };
    assert!(r.random_bool(0.5));
    assert!(!r.random_bool(0.5));
    assert!(r.random_bool(0.5));
}

#[test]
fn exhaustive_agreement_with_reference_on_small_graphs() {
    let mut rng = stage_rng(31, "graphs");
    for n in 1..=8 {
        for trial in 0..6 {
            let graph = random_graph(&mut rng, n, trial % 2 == 0);
            for m in 1..=n {
                let removals = n - m;
                for bits in 0..(1u32 << removals) {
                    let coins: Vec<bool> = (0..removals).map(|i| bits >> i & 1 == 1).collect();
                    let (want_kept, want_log) = reference_prune(&graph, m, &coins);
                    let got = prune_cluster_audited(&graph, m, &mut ScriptedCoins { coins, next: 0 }).unwrap();
                    assert_eq!(got.retained, want_kept);
                    assert_eq!(got.removals, want_log);
                }
            }
        }
    }
}

#[test]
fn random_graph_properties() {
    let mut rng = stage_rng(32, "props");
    for _ in 0..200 {
        let n = rng.random_range(1..=50);
        let m = rng.random_range(1..=60);
        let ties = rng.random_bool(0.3);
        let graph = random_graph(&mut rng, n, ties);
        let out = prune_cluster_audited(&graph, m, &mut stage_rng(rng.random(), "coin")).unwrap();
        assert_eq!(out.retained.len(), m.min(n));
        assert_eq!(out.removals.len(), n.saturating_sub(m));
        assert!(out.retained.windows(2).all(|w| w[0] < w[1]));

        let mut alive = vec![true; n];
        let mut previous_max = f64::INFINITY;
        for r in &out.removals {
            // the logged edge is the strongest among nodes alive at that step
            let mut max = f64::NEG_INFINITY;
            for p in 0..n {
                for q in p + 1..n {
                    if alive[p] && alive[q] {
                        max = max.max(graph.get(p, q));
                    }
                }
            }
            let (p, q) = r.edge;
            assert!(alive[p] && alive[q]);
            assert_eq!(graph.get(p, q), max);
            assert_eq!(r.affinity, max);
            assert!(r.removed == p || r.removed == q);
            assert!(max <= previous_max);
            previous_max = max;
            alive[r.removed] = false;
        }
    }
}

#[test]
fn three_node_example_keeps_the_loosely_tied_node() {
    let a = vec![1.0, 0.9, 0.2, 0.9, 1.0, 0.1, 0.2, 0.1, 1.0];
    let graph = AffinityGraph::from_matrix(vec![1, 2, 3], a).unwrap();
    for coin in [true, false] {
        let kept = prune_cluster_audited(&graph, 2, &mut ScriptedCoins { coins: vec![coin], next: 0 }).unwrap().retained;
        assert_eq!(kept, if coin { vec![2, 3] } else { vec![1, 3] });
    }
}

#[test]
fn graph_matches_entrywise_recomputation() {
    let mut rng = stage_rng(33, "graph");
    let samples: Vec<CoherencyMatrix> = (0..5).map(|_| random_psd(&mut rng, 0.3)).collect();
    let graph = build_affinity_graph((0..5).collect(), &samples, 0.42).unwrap();
    for p in 0..5 {
        for q in 0..5 {
            let d = revised_wishart_distance(&samples[p], &samples[q]).unwrap();
            let expected = if p == q { 1.0 } else { (-d * d / (2.0 * 0.42 * 0.42)).exp().max(f64::MIN_POSITIVE) };
            assert!((graph.get(p, q) - expected).abs() <= 1e-12);
            assert_eq!(graph.get(p, q), graph.get(q, p));
            assert_eq!(graph.get(p, q), affinity(&samples[p], &samples[q], 0.42).unwrap());
        }
    }
    let same = build_affinity_graph(vec![0, 1, 2], &[samples[0]; 3], 0.42).unwrap();
    assert!(same.matrix().iter().all(|&a| a == 1.0));
    assert_eq!(build_affinity_graph(vec![7], &samples[..1], 0.42).unwrap().matrix(), &[1.0]);
}

fn two_cluster_fixture(sizes: [usize; 2]) -> (PolSarScene, Vec<(usize, usize)>, Vec<CoherencyMatrix>, ClusterModel) {
    let width = 50;
    let total = sizes[0] + sizes[1];
    let height = total.div_ceil(width);
    let mut rng = stage_rng(34, "fixture");
    let pixels: Vec<CoherencyMatrix> = (0..height * width).map(|_| random_psd(&mut rng, 0.2)).collect();
    let scene = PolSarScene::new(height, width, pixels).unwrap();
    let positions: Vec<(usize, usize)> = (0..total).map(|i| (i / width, i % width)).collect();
    let samples = candidate_samples(&scene, &positions, 3).unwrap();
    let assignments: Vec<usize> = (0..total).map(|i| usize::from(i >= sizes[0])).collect();
    let model = ClusterModel {
        prototypes: vec![CoherencyMatrix::identity(); 2],
        distances: vec![0.0; total],
        assignments,
        iterations_run: 1,
        converged: true,
    };
    (scene, positions, samples, model)
}

#[test]
fn collect_keeps_m_per_cluster() {
    let (scene, positions, samples, model) = two_cluster_fixture([700, 650]);
    let params = CollectParams { gamma: 0.42, per_cluster: 600, patch_size: 3, seed: 5 };
    let a = collect_dataset(&scene, &positions, &samples, &model, &params).unwrap();
    assert_eq!(a.len(), 1200);
    assert_eq!(a.provenance.iter().filter(|p| p.cluster == 0).count(), 600);
    let mut seen: Vec<_> = a.provenance.iter().map(|p| (p.row, p.col)).collect();
    seen.sort_unstable();
    seen.dedup();
    assert_eq!(seen.len(), 1200);
    let b = collect_dataset(&scene, &positions, &samples, &model, &params).unwrap();
    assert_eq!(a.provenance, b.provenance);

    let all = CollectParams { per_cluster: 10_000, ..params };
    assert_eq!(collect_dataset(&scene, &positions, &samples, &model, &all).unwrap().len(), 1350);
}

#[test]
fn prune_is_identity_when_small() {
    let graph = random_graph(&mut stage_rng(35, "g"), 6, false);
    assert_eq!(prune_cluster(&graph, 6, &mut stage_rng(1, "c")).unwrap(), (100..106).collect::<Vec<_>>());
    assert!(prune_cluster(&graph, 0, &mut stage_rng(1, "c")).is_err());
}
