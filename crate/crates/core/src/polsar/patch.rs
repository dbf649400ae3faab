//! Patch extraction around a pixel, the 180° rotation used as the positive
//! view, and per-channel standardization.

use crate::error::{Error, Result};

use super::coherency::{pixel_features, CoherencyMatrix};
use super::scene::PolSarScene;

pub const CHANNELS: usize = 9;

/// `channels × size × size` real tensor, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchTensor {
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl PatchTensor {
    pub fn new(channels: usize, height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != channels * height * width {
            return Err(Error::shape(format!(
                "patch {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite patch value"));
        }
        Ok(PatchTensor { channels, height, width, values })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, c: usize, i: usize, j: usize) -> f64 {
        self.values[(c * self.height + i) * self.width + j]
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Reflects an out-of-range index back into `0..len` without repeating the
/// edge sample (…, 2, 1, 0, 1, 2, …).
pub fn reflect_index(idx: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = idx.rem_euclid(period);
    if m < len as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

fn check_window(scene: &PolSarScene, row: usize, col: usize, size: usize) -> Result<()> {
    if size.is_multiple_of(2) || size == 0 {
        return Err(Error::invalid(format!("patch size must be odd, got {size}")));
    }
    if !scene.contains(row, col) {
        return Err(Error::invalid(format!(
            "pixel ({row}, {col}) outside {}x{} scene",
            scene.height(),
            scene.width()
        )));
    }
    Ok(())
}

fn window_rows(scene: &PolSarScene, row: usize, size: usize) -> impl Iterator<Item = usize> + '_ {
    let half = (size / 2) as isize;
    (0..size as isize).map(move |i| reflect_index(row as isize - half + i, scene.height()))
}

fn window_cols(scene: &PolSarScene, col: usize, size: usize) -> Vec<usize> {
    let half = (size / 2) as isize;
    (0..size as isize)
        .map(|j| reflect_index(col as isize - half + j, scene.width()))
        .collect()
}

/// Crops the `size × size` neighbourhood of `(row, col)` into a 9-channel
/// patch; out-of-bounds positions are mirrored at the scene edge.
pub fn extract_patch(scene: &PolSarScene, row: usize, col: usize, size: usize) -> Result<PatchTensor> {
    check_window(scene, row, col, size)?;
    let cols = window_cols(scene, col, size);
    let plane = size * size;
    let mut values = vec![0.0; CHANNELS * plane];
    for (i, r) in window_rows(scene, row, size).enumerate() {
        for (j, &c) in cols.iter().enumerate() {
            let f = pixel_features(scene.get(r, c));
            for (ch, v) in f.iter().enumerate() {
                values[ch * plane + i * size + j] = *v;
            }
        }
    }
    PatchTensor::new(CHANNELS, size, size, values)
}

/// Boxcar mean of the coherency matrices in the patch window (same mirroring
/// as [`extract_patch`]).
pub fn patch_mean_coherency(scene: &PolSarScene, row: usize, col: usize, size: usize) -> Result<CoherencyMatrix> {
    check_window(scene, row, col, size)?;
    let cols = window_cols(scene, col, size);
    let mut acc = CoherencyMatrix::ZERO;
    for r in window_rows(scene, row, size) {
        for &c in &cols {
            acc.add_assign(scene.get(r, c));
        }
    }
    Ok(acc.scaled(1.0 / (size * size) as f64))
}

/// Reverses both spatial axes of every channel.
pub fn rotate180(patch: &PatchTensor) -> PatchTensor {
    let plane = patch.height * patch.width;
    let mut values = Vec::with_capacity(patch.values.len());
    for ch in patch.values.chunks_exact(plane) {
        values.extend(ch.iter().rev());
    }
    PatchTensor { values, ..*patch }
}

/// Per-channel affine standardization `(x - mean) / std`.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(channels: usize) -> Self {
        Standardizer { mean: vec![0.0; channels], std: vec![1.0; channels] }
    }

    /// Channel statistics over every pixel of the scene. A constant channel
    /// gets unit scale.
    pub fn fit(scene: &PolSarScene) -> Self {
        let n = scene.pixels().len().max(1) as f64;
        let mut mean = vec![0.0; CHANNELS];
        for p in scene.pixels() {
            for (m, v) in mean.iter_mut().zip(pixel_features(p)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; CHANNELS];
        for p in scene.pixels() {
            for ((s, m), v) in var.iter_mut().zip(&mean).zip(pixel_features(p)) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, std }
    }

    pub fn apply(&self, patch: &PatchTensor) -> Result<PatchTensor> {
        if patch.channels != self.mean.len() {
            return Err(Error::shape(format!(
                "standardizer has {} channels, patch has {}",
                self.mean.len(),
                patch.channels
            )));
        }
        let plane = patch.height * patch.width;
        let mut values = patch.values.clone();
        for (c, ch) in values.chunks_exact_mut(plane).enumerate() {
            let (m, s) = (self.mean[c], self.std[c]);
            ch.iter_mut().for_each(|v| *v = (*v - m) / s);
        }
        Ok(PatchTensor { values, ..*patch })
    }
}
