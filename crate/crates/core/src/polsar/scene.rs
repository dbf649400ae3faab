use crate::error::{Error, Result};

use super::coherency::{validate_coherency, CoherencyMatrix};

/// H×W grid of coherency matrices, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PolSarScene {
    height: usize,
    width: usize,
    pixels: Vec<CoherencyMatrix>,
}

impl PolSarScene {
    pub fn new(height: usize, width: usize, pixels: Vec<CoherencyMatrix>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::shape(format!(
                "scene {height}x{width} needs {} pixels, got {}",
                height * width,
                pixels.len()
            )));
        }
        Ok(PolSarScene { height, width, pixels })
    }

    /// Like [`PolSarScene::new`], additionally rejecting pixels that fail
    /// [`validate_coherency`] at `tol`.
    pub fn new_validated(height: usize, width: usize, pixels: Vec<CoherencyMatrix>, tol: f64) -> Result<Self> {
        for (i, p) in pixels.iter().enumerate() {
            let report = validate_coherency(p, tol);
            if let Some(issue) = report.issues.first() {
                return Err(Error::invalid(format!(
                    "pixel ({}, {}): {issue}",
                    i / width.max(1),
                    i % width.max(1)
                )));
            }
        }
        Self::new(height, width, pixels)
    }

    pub fn constant(height: usize, width: usize, value: CoherencyMatrix) -> Self {
        PolSarScene { height, width, pixels: vec![value; height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[CoherencyMatrix] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> &CoherencyMatrix {
        &self.pixels[row * self.width + col]
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        row < self.height && col < self.width
    }
}

/// Per-pixel class labels; 0 = unlabeled, 1..=num_classes otherwise.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    num_classes: u32,
    labels: Vec<u32>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, num_classes: u32, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::shape(format!(
                "label map {height}x{width} needs {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l > num_classes) {
            return Err(Error::invalid(format!("label {bad} exceeds num_classes {num_classes}")));
        }
        Ok(LabelMap { height, width, num_classes, labels })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> u32 {
        self.num_classes
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.width + col]
    }

    pub fn same_shape(&self, scene: &PolSarScene) -> bool {
        self.height == scene.height() && self.width == scene.width()
    }

    /// Pixel count per class, index 0 = unlabeled.
    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes as usize + 1];
        for &l in &self.labels {
            h[l as usize] += 1;
        }
        h
    }

    /// Row-major positions of all labeled pixels.
    pub fn labeled_positions(&self) -> Vec<(usize, usize, u32)> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l != 0)
            .map(|(i, &l)| (i / self.width, i % self.width, l))
            .collect()
    }
}
