//! Few-shot classification on frozen encoder features.

mod metrics;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

pub use metrics::{evaluate, evaluate_masked, EvalReport};

use crate::contrastive::encode_features;
use crate::error::{Error, Result};
use crate::nn::{batch_tensor, ConvEncoder, Linear, Parameters, SgdConfig, Tensor};
use crate::polsar::{extract_patch, LabelMap, PatchTensor, PolSarScene, Standardizer};
use crate::rng::stage_rng;

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Fully connected layer followed by softmax, on top of the GAP features.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    pub layer: Linear,
}

impl LinearClassifier {
    pub fn zeros(features: usize, num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::invalid("a classifier needs at least 2 classes"));
        }
        Ok(LinearClassifier { layer: Linear::zeros(features, num_classes) })
    }

    pub fn num_classes(&self) -> usize {
        self.layer.outputs()
    }

    pub fn feature_dim(&self) -> usize {
        self.layer.inputs()
    }

    /// Class probabilities for each row of `features`.
    pub fn probabilities(&self, features: &Tensor) -> Result<Vec<Vec<f64>>> {
        let logits = self.layer.forward(features)?;
        Ok(logits.data().chunks_exact(self.num_classes()).map(softmax).collect())
    }
}

impl Parameters for LinearClassifier {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        self.layer.named_tensors().into_iter().map(|(n, t)| (format!("classifier.{n}"), t)).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layer.tensors_mut()
    }
}

/// Class probabilities `softmax(W h + b)` for one (standardized) patch.
pub fn classify_logits(encoder: &ConvEncoder, classifier: &LinearClassifier, patch: &PatchTensor) -> Result<Vec<f64>> {
    let h = encoder.forward(&batch_tensor(&[patch])?)?;
    Ok(classifier.probabilities(&h)?.remove(0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig { epochs: 300, learning_rate: 0.01, batch_size: 32, seed: 0 }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("finetune epochs and batch_size must be >= 1"));
        }
        SgdConfig::constant(self.learning_rate).validate()
    }
}

/// Trains a zero-initialized linear softmax head on frozen features by
/// mini-batch SGD on the mean cross-entropy. Labels are 1-based. The
/// parameters after the last epoch are returned.
pub fn finetune_on_features(
    features: &Tensor,
    labels: &[u32],
    num_classes: usize,
    config: &FinetuneConfig,
) -> Result<LinearClassifier> {
    config.validate()?;
    features.expect_rank(2, "finetune features")?;
    let (n, dim) = (features.shape()[0], features.shape()[1]);
    if labels.len() != n {
        return Err(Error::shape("one label per feature row required"));
    }
    let mut seen = vec![false; num_classes];
    for &l in labels {
        if l == 0 || l as usize > num_classes {
            return Err(Error::invalid(format!("label {l} outside 1..={num_classes}")));
        }
        seen[l as usize - 1] = true;
    }
    if let Some(c) = seen.iter().position(|s| !s) {
        return Err(Error::UncoveredClass(c as u32 + 1));
    }
    let mut clf = LinearClassifier::zeros(dim, num_classes)?;
    let mut rng = stage_rng(config.seed, "finetune");
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let x: Vec<f64> = batch.iter().flat_map(|&i| features.data()[i * dim..(i + 1) * dim].iter().copied()).collect();
            let x = Tensor::from_vec(&[batch.len(), dim], x)?;
            let probs = clf.probabilities(&x)?;
            let scale = 1.0 / batch.len() as f64;
            let mut g = Vec::with_capacity(batch.len() * num_classes);
            for (p, &i) in probs.iter().zip(batch) {
                let target = labels[i] as usize - 1;
                g.extend(p.iter().enumerate().map(|(c, &pc)| (pc - f64::from(u8::from(c == target))) * scale));
            }
            let (_, grads) = clf.layer.backward(&x, &Tensor::from_vec(&[batch.len(), num_classes], g)?)?;
            crate::nn::sgd_step(&mut clf.layer, &grads, config.learning_rate)?;
        }
    }
    Ok(clf)
}

/// Encodes labeled (standardized) patches with the frozen encoder and trains
/// the linear head on them. The encoder is only borrowed immutably.
pub fn finetune(
    encoder: &ConvEncoder,
    labeled: &[(PatchTensor, u32)],
    num_classes: usize,
    config: &FinetuneConfig,
) -> Result<LinearClassifier> {
    if labeled.is_empty() {
        return Err(Error::UncoveredClass(1));
    }
    let patches: Vec<PatchTensor> = labeled.iter().map(|(p, _)| p.clone()).collect();
    let labels: Vec<u32> = labeled.iter().map(|(_, l)| *l).collect();
    let features = encode_features(encoder, &patches)?;
    finetune_on_features(&features, &labels, num_classes, config)
}

/// Input standardization plus the frozen encoder: everything needed to turn
/// a scene position into a feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor {
    pub standardizer: Standardizer,
    pub encoder: ConvEncoder,
    pub patch_size: usize,
}

impl FeatureExtractor {
    pub fn patch(&self, scene: &PolSarScene, row: usize, col: usize) -> Result<PatchTensor> {
        self.standardizer.apply(&extract_patch(scene, row, col, self.patch_size)?)
    }

    /// GAP features at the given positions, `[n, feature_dim]`.
    pub fn features_at(&self, scene: &PolSarScene, positions: &[(usize, usize)]) -> Result<Tensor> {
        let patches: Vec<PatchTensor> = positions
            .par_iter()
            .map(|&(r, c)| self.patch(scene, r, c))
            .collect::<Result<_>>()?;
        encode_features(&self.encoder, &patches)
    }
}

/// Predicts every pixel of the scene (labels 1..=C).
pub fn predict_map(scene: &PolSarScene, extractor: &FeatureExtractor, classifier: &LinearClassifier) -> Result<LabelMap> {
    let (h, w) = (scene.height(), scene.width());
    let rows: Vec<Vec<u32>> = (0..h)
        .into_par_iter()
        .map(|r| {
            let positions: Vec<(usize, usize)> = (0..w).map(|c| (r, c)).collect();
            let feats = extractor.features_at(scene, &positions)?;
            Ok(classifier.probabilities(&feats)?.iter().map(|p| argmax(p) as u32 + 1).collect())
        })
        .collect::<Result<_>>()?;
    LabelMap::new(h, w, classifier.num_classes() as u32, rows.concat())
}

/// Draws up to `shots` labeled positions per class, seeded. Every class in
/// `1..=num_classes` must have at least one labeled pixel.
pub fn sample_labeled_positions<R: Rng + ?Sized>(
    labels: &LabelMap,
    shots: usize,
    rng: &mut R,
) -> Result<Vec<(usize, usize, u32)>> {
    let mut by_class: Vec<Vec<(usize, usize, u32)>> = vec![Vec::new(); labels.num_classes() as usize];
    for p in labels.labeled_positions() {
        by_class[p.2 as usize - 1].push(p);
    }
    let mut out = Vec::new();
    for (c, pool) in by_class.iter_mut().enumerate() {
        if pool.is_empty() {
            return Err(Error::UncoveredClass(c as u32 + 1));
        }
        pool.shuffle(rng);
        let mut picked: Vec<_> = pool.iter().take(shots).copied().collect();
        picked.sort_unstable();
        out.extend(picked);
    }
    Ok(out)
}

/// Fixed class palette (RGB) for rendered maps; class `c ≥ 1` uses entry
/// `(c − 1) mod 16`, unlabeled pixels are black.
pub const PALETTE: [[u8; 3]; 16] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [220, 190, 255],
    [170, 110, 40],
    [255, 250, 200],
    [128, 0, 0],
    [170, 255, 195],
];

pub fn class_color(label: u32) -> [u8; 3] {
    if label == 0 {
        [0, 0, 0]
    } else {
        PALETTE[(label as usize - 1) % PALETTE.len()]
    }
}
