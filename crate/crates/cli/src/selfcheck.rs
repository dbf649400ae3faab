//! A quick built-in suite of oracle and gradient checks, run by
//! `pclnet selfcheck`. The full suites live in the test targets; this one
//! exists so an installed binary can vouch for its own numerics.

use pclnet_core::classify::EvalReport;
use pclnet_core::contrastive::{info_nce, momentum_update, MemoryBank};
use pclnet_core::diversity::{build_affinity_graph, prune_cluster};
use pclnet_core::nn::{grad_check, Conv2d, Linear, Parameters, Tensor};
use pclnet_core::polsar::{sample_wishart, CoherencyMatrix};
use pclnet_core::rng::{stage_rng, Rng};
use pclnet_core::wishart::revised_wishart_distance;
use pclnet_core::Result;
use rand::Rng as _;

/// Outcome of one check.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

fn random_tensor(shape: &[usize], rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape matches")
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn random_psd(rng: &mut Rng) -> Result<CoherencyMatrix> {
    let d: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.5..4.0));
    sample_wishart(&CoherencyMatrix::diag(d[0], d[1], d[2]), 6, rng)
}

fn wishart_distance() -> Result<Check> {
    let mut rng = stage_rng(0, "selfcheck-distance");
    let mut worst_sym = 0.0f64;
    let mut worst_self = 0.0f64;
    for _ in 0..200 {
        let (t, v) = (random_psd(&mut rng)?, random_psd(&mut rng)?);
        let (a, b) = (revised_wishart_distance(&t, &v)?, revised_wishart_distance(&v, &t)?);
        worst_sym = worst_sym.max((a - b).abs() / a.abs().max(1.0));
        worst_self = worst_self.max(revised_wishart_distance(&t, &t)?.abs());
    }
    // Diagonal pairs have the closed form ½Σ(a/b + b/a) − 3.
    let (a, b) = ([1.0, 2.0, 5.0], [4.0, 0.5, 5.0]);
    let closed: f64 = a.iter().zip(&b).map(|(x, y)| 0.5 * (x / y + y / x)).sum::<f64>() - 3.0;
    let d = revised_wishart_distance(&CoherencyMatrix::diag(a[0], a[1], a[2]), &CoherencyMatrix::diag(b[0], b[1], b[2]))?;
    let diag_err = (d - closed).abs();
    Ok(check(
        "wishart distance",
        worst_sym <= 1e-12 && worst_self <= 1e-10 && diag_err <= 1e-12,
        format!("symmetry {worst_sym:.1e}, self {worst_self:.1e}, diagonal oracle {diag_err:.1e}"),
    ))
}

fn eigenvalues() -> Result<Check> {
    let mut rng = stage_rng(0, "selfcheck-eig");
    let mut worst = 0.0f64;
    let mut ordered = true;
    for _ in 0..200 {
        let t = random_psd(&mut rng)?;
        let e = t.eigenvalues();
        worst = worst.max((e.iter().sum::<f64>() - t.trace()).abs() / t.trace());
        ordered &= e[0] >= e[1] && e[1] >= e[2] && e[2] > 0.0;
    }
    Ok(check("eigenvalues", worst <= 1e-12 && ordered, format!("trace identity {worst:.1e}")))
}

fn infonce_uniform() -> Result<Check> {
    let dim = 4;
    let k = 8192;
    let v = Tensor::from_vec(&[1, dim], vec![0.5, -1.0, 2.0, 0.25])?;
    let bank: Vec<f64> = v.data().iter().copied().cycle().take(k * dim).collect();
    let loss = info_nce(&v, &v, &bank, 0.4)?.loss;
    let expected = ((k + 1) as f64).ln();
    Ok(check(
        "infonce uniform similarity",
        (loss - expected).abs() <= 1e-9,
        format!("loss {loss:.9}, ln(K+1) {expected:.9}"),
    ))
}

fn infonce_gradient() -> Result<Check> {
    let mut rng = stage_rng(0, "selfcheck-nce");
    let (n, k, dim, tau) = (3, 7, 5, 0.4);
    let a = random_tensor(&[n, dim], &mut rng);
    let p = random_tensor(&[n, dim], &mut rng);
    let bank = random_tensor(&[k, dim], &mut rng);
    let out = info_nce(&a, &p, bank.data(), tau)?;
    let ra = grad_check(
        |x| info_nce(&Tensor::from_vec(&[n, dim], x.to_vec()).unwrap(), &p, bank.data(), tau).unwrap().loss,
        a.data(),
        out.grad_anchors.data(),
        1e-4,
    );
    let rp = grad_check(
        |x| info_nce(&a, &Tensor::from_vec(&[n, dim], x.to_vec()).unwrap(), bank.data(), tau).unwrap().loss,
        p.data(),
        out.grad_positives.data(),
        1e-4,
    );
    Ok(check(
        "infonce gradient",
        ra.passed() && rp.passed(),
        format!("anchors {:.1e}, positives {:.1e}", ra.max_rel_error, rp.max_rel_error),
    ))
}

fn layer_gradients() -> Result<Check> {
    let mut rng = stage_rng(0, "selfcheck-layers");

    let linear = Linear::init(6, 4, &mut rng);
    let x = random_tensor(&[3, 6], &mut rng);
    let g = random_tensor(&[3, 4], &mut rng);
    let (gx, gw) = linear.backward(&x, &g)?;
    let lin_x = grad_check(
        |v| dot(linear.forward(&Tensor::from_vec(&[3, 6], v.to_vec()).unwrap()).unwrap().data(), g.data()),
        x.data(),
        gx.data(),
        1e-4,
    );
    let lin_w = grad_check(
        |v| {
            let mut l = linear.clone();
            l.assign_flat(v).unwrap();
            dot(l.forward(&x).unwrap().data(), g.data())
        },
        &linear.flatten(),
        &gw.flatten(),
        1e-4,
    );

    let conv = Conv2d::init(2, 3, &mut rng);
    let x = random_tensor(&[1, 2, 5, 5], &mut rng);
    let y = conv.forward(&x)?;
    let g = random_tensor(y.shape(), &mut rng);
    let (gx, gw) = conv.backward(&x, &g)?;
    let conv_x = grad_check(
        |v| dot(conv.forward(&Tensor::from_vec(&[1, 2, 5, 5], v.to_vec()).unwrap()).unwrap().data(), g.data()),
        x.data(),
        gx.data(),
        1e-4,
    );
    let conv_w = grad_check(
        |v| {
            let mut c = conv.clone();
            c.assign_flat(v).unwrap();
            dot(c.forward(&x).unwrap().data(), g.data())
        },
        &conv.flatten(),
        &gw.flatten(),
        1e-4,
    );
    let worst = [&lin_x, &lin_w, &conv_x, &conv_w].iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    Ok(check(
        "linear and conv gradients",
        lin_x.passed() && lin_w.passed() && conv_x.passed() && conv_w.passed(),
        format!("worst relative error {worst:.1e}"),
    ))
}

fn memory_bank() -> Result<Check> {
    let mut bank = MemoryBank::new(4, 1)?;
    let mut expected = std::collections::VecDeque::new();
    let mut ok = true;
    for step in 0..6 {
        let batch = [2.0 * step as f64, 2.0 * step as f64 + 1.0];
        bank.enqueue(&Tensor::from_vec(&[2, 1], batch.to_vec())?)?;
        expected.extend(batch);
        while expected.len() > 4 {
            expected.pop_front();
        }
        ok &= bank.entries() == expected.iter().copied().collect::<Vec<_>>();
    }
    Ok(check("memory bank fifo", ok, format!("final entries {:?}", bank.entries())))
}

fn momentum() -> Result<Check> {
    let mut rng = stage_rng(0, "selfcheck-momentum");
    // Values on a dyadic grid keep every product and sum exact.
    let grid = |rng: &mut Rng| rng.random_range(-64i32..64) as f64 / 64.0;
    let main = Linear { weight: Tensor::from_vec(&[2, 3], (0..6).map(|_| grid(&mut rng)).collect())?, bias: Tensor::zeros(&[2]) };
    let aux = Linear { weight: Tensor::from_vec(&[2, 3], (0..6).map(|_| grid(&mut rng)).collect())?, bias: Tensor::zeros(&[2]) };
    let mut ok = true;
    for m in [0.0, 0.5, 1.0] {
        let mut updated = aux.clone();
        momentum_update(&mut updated, &main, m)?;
        for ((u, a), t) in updated.flatten().iter().zip(aux.flatten()).zip(main.flatten()) {
            ok &= (u - t).abs() == m * (a - t).abs();
        }
    }
    Ok(check("momentum contraction", ok, "exact for m in {0, 0.5, 1}".into()))
}

fn pruning() -> Result<Check> {
    let mut rng = stage_rng(0, "selfcheck-prune");
    let samples: Vec<CoherencyMatrix> = (0..12).map(|_| random_psd(&mut rng)).collect::<Result<_>>()?;
    let graph = build_affinity_graph((0..12).collect(), &samples, 0.42)?;
    let mut ok = true;
    for m in [1, 5, 12, 20] {
        let kept = prune_cluster(&graph, m, &mut rng)?;
        ok &= kept.len() == m.min(12);
    }
    Ok(check("diversity pruning size", ok, "retained = min(M, N)".into()))
}

fn metrics() -> Result<Check> {
    let r = EvalReport::from_confusion(vec![vec![3, 1], vec![2, 4]])?;
    // OA 7/10; recalls 3/4 and 4/6; chance agreement (4·5 + 6·5)/100 = 1/2.
    let aa = (0.75 + 4.0 / 6.0) / 2.0;
    let err = (r.overall_accuracy - 0.7).abs().max((r.average_accuracy - aa).abs()).max((r.kappa - 0.4).abs());
    Ok(check("metrics", err <= 1e-12, format!("max error {err:.1e}")))
}

type CheckFn = fn() -> Result<Check>;

/// Runs every check; errors inside a check count as failures.
pub fn run() -> Vec<Check> {
    let suite: [(&'static str, CheckFn); 9] = [
        ("wishart distance", wishart_distance),
        ("eigenvalues", eigenvalues),
        ("infonce uniform similarity", infonce_uniform),
        ("infonce gradient", infonce_gradient),
        ("linear and conv gradients", layer_gradients),
        ("memory bank fifo", memory_bank),
        ("momentum contraction", momentum),
        ("diversity pruning size", pruning),
        ("metrics", metrics),
    ];
    suite
        .into_iter()
        .map(|(name, f)| f().unwrap_or_else(|e| check(name, false, format!("error: {e}"))))
        .collect()
}
