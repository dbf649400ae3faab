#![allow(dead_code)]

use nalgebra::{Complex, Matrix3};
use pclnet_core::polsar::CoherencyMatrix;
use rand::Rng;

pub type CMat = Matrix3<Complex<f64>>;

pub fn to_nalgebra(t: &CoherencyMatrix) -> CMat {
    let m = t.to_complex();
    CMat::from_fn(|i, j| Complex::new(m[i][j].re, m[i][j].im))
}

/// Random Hermitian PSD matrix `A Aᴴ + δI` with a random complex `A`.
pub fn random_psd<R: Rng + ?Sized>(rng: &mut R, ridge: f64) -> CoherencyMatrix {
    let a = CMat::from_fn(|_, _| Complex::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    let m = a * a.adjoint() + CMat::identity() * Complex::new(ridge, 0.0);
    from_nalgebra(&m)
}

pub fn from_nalgebra(m: &CMat) -> CoherencyMatrix {
    CoherencyMatrix([
        m[(0, 0)].re,
        m[(1, 1)].re,
        m[(2, 2)].re,
        m[(0, 1)].re,
        m[(0, 1)].im,
        m[(0, 2)].re,
        m[(0, 2)].im,
        m[(1, 2)].re,
        m[(1, 2)].im,
    ])
}

/// Eigenvalues of a Hermitian matrix by nalgebra, descending.
pub fn oracle_eigenvalues(t: &CoherencyMatrix) -> [f64; 3] {
    let mut e: Vec<f64> = to_nalgebra(t).symmetric_eigenvalues().iter().copied().collect();
    e.sort_by(|a, b| b.total_cmp(a));
    [e[0], e[1], e[2]]
}

/// `½ tr(T V⁻¹ + V T⁻¹) − 3` with LU inverses, for well-conditioned inputs.
pub fn oracle_distance(t: &CoherencyMatrix, v: &CoherencyMatrix) -> f64 {
    let (tm, vm) = (to_nalgebra(t), to_nalgebra(v));
    let ti = tm.try_inverse().expect("invertible");
    let vi = vm.try_inverse().expect("invertible");
    0.5 * (tm * vi + vm * ti).trace().re - 3.0
}

/// Best label agreement over all permutations of `k` cluster ids.
pub fn best_permutation_agreement(truth: &[usize], found: &[usize], k: usize) -> f64 {
    fn permutations(k: usize) -> Vec<Vec<usize>> {
        if k == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(k - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, k - 1);
                out.push(q);
            }
        }
        out
    }
    permutations(k)
        .iter()
        .map(|perm| truth.iter().zip(found).filter(|(t, f)| perm[**f] == **t).count())
        .max()
        .unwrap_or(0) as f64
        / truth.len() as f64
}

use pclnet_core::polsar::{extract_patch, synth_scene, LabelMap, PatchTensor, PolSarScene, Standardizer, SyntheticSceneSpec};

/// Three-band synthetic scene (8 looks, class contrast 0.2) with its fitted
/// standardizer.
pub fn three_band_scene(height: usize, width: usize, seed: u64) -> (PolSarScene, LabelMap, Standardizer) {
    let spec = SyntheticSceneSpec::three_band(height, width, 8, seed).with_class_contrast(0.2).unwrap();
    let (scene, labels) = synth_scene(&spec).unwrap();
    let standardizer = Standardizer::fit(&scene);
    (scene, labels, standardizer)
}

/// `n` standardized patches at seeded random positions.
pub fn random_standardized_patches<R: Rng + ?Sized>(
    scene: &PolSarScene,
    standardizer: &Standardizer,
    n: usize,
    size: usize,
    rng: &mut R,
) -> Vec<PatchTensor> {
    (0..n)
        .map(|_| {
            let (r, c) = (rng.random_range(0..scene.height()), rng.random_range(0..scene.width()));
            standardizer.apply(&extract_patch(scene, r, c, size).unwrap()).unwrap()
        })
        .collect()
}
