//! Synthetic scenes drawn from the complex Wishart model.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::indexed_rng;

use super::coherency::{validate_coherency, CoherencyMatrix, Mat3};
use super::scene::{LabelMap, PolSarScene};

/// Draws one multi-look coherency matrix `T = (1/n) Σ k kᴴ` with `k` circular
/// complex Gaussian of covariance `sigma`.
pub fn sample_wishart<R: Rng + ?Sized>(sigma: &CoherencyMatrix, looks: u32, rng: &mut R) -> Result<CoherencyMatrix> {
    if looks == 0 {
        return Err(Error::invalid("looks must be >= 1"));
    }
    let factor = WishartFactor::new(sigma)?;
    Ok(factor.sample(looks, rng))
}

/// Lower-triangular factor `L` with `L Lᴴ = Σ`, reusable across draws.
#[derive(Debug, Clone, Copy)]
pub struct WishartFactor {
    lower: Mat3,
}

impl WishartFactor {
    pub fn new(sigma: &CoherencyMatrix) -> Result<Self> {
        if !validate_coherency(sigma, 1e-9).is_valid() {
            return Err(Error::CovarianceNotPsd);
        }
        let a = sigma.to_complex();
        let zero = Complex64::new(0.0, 0.0);
        let mut l = [[zero; 3]; 3];
        let floor = 1e-14 * sigma.trace().max(f64::MIN_POSITIVE);
        // Cholesky that tolerates rank deficiency: a vanishing pivot zeroes its column.
        for j in 0..3 {
            let mut d = a[j][j].re;
            for k in 0..j {
                d -= l[j][k].norm_sqr();
            }
            if d <= floor {
                continue;
            }
            let djj = d.sqrt();
            l[j][j] = Complex64::new(djj, 0.0);
            for i in j + 1..3 {
                let mut s = a[i][j];
                for k in 0..j {
                    s -= l[i][k] * l[j][k].conj();
                }
                l[i][j] = s / djj;
            }
        }
        Ok(WishartFactor { lower: l })
    }

    pub fn sample<R: Rng + ?Sized>(&self, looks: u32, rng: &mut R) -> CoherencyMatrix {
        let zero = Complex64::new(0.0, 0.0);
        let mut acc = [[zero; 3]; 3];
        let half = std::f64::consts::FRAC_1_SQRT_2;
        for _ in 0..looks {
            let z: [Complex64; 3] = std::array::from_fn(|_| {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                Complex64::new(re * half, im * half)
            });
            let mut k = [zero; 3];
            for i in 0..3 {
                for j in 0..=i {
                    k[i] += self.lower[i][j] * z[j];
                }
            }
            for i in 0..3 {
                for j in i..3 {
                    acc[i][j] += k[i] * k[j].conj();
                }
            }
        }
        let inv = 1.0 / looks as f64;
        CoherencyMatrix::from_complex(&acc).scaled(inv)
    }
}

/// Axis-aligned block of the scene assigned to one class (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub row: usize,
    pub col: usize,
    pub rows: usize,
    pub cols: usize,
    pub class: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSceneSpec {
    pub height: usize,
    pub width: usize,
    pub looks: u32,
    /// Class covariances; class `c` uses `covariances[c - 1]`.
    pub covariances: Vec<CoherencyMatrix>,
    pub regions: Vec<Region>,
    pub seed: u64,
}

impl SyntheticSceneSpec {
    /// Three classes in equal vertical bands, with covariances loosely modelled
    /// on surface, double-bounce and volume scattering.
    pub fn three_band(height: usize, width: usize, looks: u32, seed: u64) -> Self {
        let covariances = three_class_covariances();
        let mut regions = Vec::new();
        let mut col = 0;
        for c in 0..3 {
            let end = width * (c + 1) / 3;
            regions.push(Region { row: 0, col, rows: height, cols: end - col, class: c as u32 + 1 });
            col = end;
        }
        SyntheticSceneSpec { height, width, looks, covariances, regions, seed }
    }

    pub fn num_classes(&self) -> u32 {
        self.covariances.len() as u32
    }

    /// Pulls every class covariance towards their mean:
    /// `Σ_c ← Σ̄ + contrast·(Σ_c − Σ̄)`. `contrast = 1` leaves them unchanged,
    /// smaller values make the classes harder to tell apart. Results stay PSD
    /// for `contrast` in `[0, 1]`.
    pub fn with_class_contrast(mut self, contrast: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&contrast) {
            return Err(Error::invalid(format!("class contrast must be in [0, 1], got {contrast}")));
        }
        let Some(mean) = CoherencyMatrix::mean(&self.covariances) else {
            return Ok(self);
        };
        for c in &mut self.covariances {
            *c = CoherencyMatrix(std::array::from_fn(|i| mean.0[i] + contrast * (c.0[i] - mean.0[i])));
        }
        Ok(self)
    }

    fn owner_map(&self) -> Result<Vec<u32>> {
        let mut owner = vec![0u32; self.height * self.width];
        for r in &self.regions {
            if r.class == 0 || r.class > self.num_classes() {
                return Err(Error::invalid(format!("region class {} out of range", r.class)));
            }
            if r.row + r.rows > self.height || r.col + r.cols > self.width {
                return Err(Error::invalid(format!("region {r:?} exceeds the scene")));
            }
            for i in r.row..r.row + r.rows {
                for j in r.col..r.col + r.cols {
                    let slot = &mut owner[i * self.width + j];
                    if *slot != 0 {
                        return Err(Error::invalid(format!("regions overlap at ({i}, {j})")));
                    }
                    *slot = r.class;
                }
            }
        }
        if let Some(i) = owner.iter().position(|&o| o == 0) {
            return Err(Error::invalid(format!(
                "regions do not tile the scene: ({}, {}) uncovered",
                i / self.width,
                i % self.width
            )));
        }
        Ok(owner)
    }
}

/// Covariances of the built-in three-class scene.
pub fn three_class_covariances() -> Vec<CoherencyMatrix> {
    vec![
        // surface: dominant T11, weak cross-pol
        CoherencyMatrix([1.0, 0.25, 0.08, 0.15, 0.05, 0.0, 0.0, 0.0, 0.0]),
        // double bounce: dominant T22
        CoherencyMatrix([0.35, 0.9, 0.12, -0.1, 0.12, 0.0, 0.0, 0.02, 0.0]),
        // volume: near-isotropic with strong T33
        CoherencyMatrix([0.5, 0.45, 0.4, 0.03, 0.0, 0.0, 0.0, 0.0, 0.0]),
    ]
}

/// Samples every pixel from its region's class covariance. Each pixel draws
/// from its own counter-based stream, so the result does not depend on the
/// worker count.
pub fn synth_scene(spec: &SyntheticSceneSpec) -> Result<(PolSarScene, LabelMap)> {
    if spec.looks == 0 {
        return Err(Error::invalid("looks must be >= 1"));
    }
    let owner = spec.owner_map()?;
    let factors = spec
        .covariances
        .iter()
        .map(WishartFactor::new)
        .collect::<Result<Vec<_>>>()?;
    let pixels: Vec<CoherencyMatrix> = owner
        .par_iter()
        .enumerate()
        .map(|(i, &class)| {
            let mut rng = indexed_rng(spec.seed, "synth", i as u64);
            factors[class as usize - 1].sample(spec.looks, &mut rng)
        })
        .collect();
    let scene = PolSarScene::new(spec.height, spec.width, pixels)?;
    let labels = LabelMap::new(spec.height, spec.width, spec.num_classes(), owner)?;
    Ok((scene, labels))
}
