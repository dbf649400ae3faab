//! Pipeline stages wired from a [`RunConfig`]. Each stage draws its
//! randomness from its own substream of the run seed, so any stage can be
//! re-run in isolation with the same result.

use std::collections::HashSet;

use log::info;
use pclnet_core::classify::{
    evaluate, evaluate_masked, finetune, predict_map, sample_labeled_positions, EvalReport, FeatureExtractor,
    LinearClassifier,
};
use pclnet_core::contrastive::{pretrain, PretrainOutcome};
use pclnet_core::diversity::{candidate_grid, candidate_samples, collect_dataset, CollectParams, PretrainDataset};
use pclnet_core::io::Checkpoint;
use pclnet_core::nn::ConvEncoder;
use pclnet_core::polsar::{synth_scene, CoherencyMatrix, LabelMap, PatchTensor, PolSarScene, Standardizer, SyntheticSceneSpec};
use pclnet_core::rng::stage_rng;
use pclnet_core::wishart::{wishart_cluster, ClusterModel};
use pclnet_core::{Error, Result};
use rand::seq::SliceRandom;

use crate::config::RunConfig;

/// Labeled pixel `(row, col, class)`.
pub type LabeledPixel = (usize, usize, u32);

pub fn scene_spec(config: &RunConfig) -> Result<SyntheticSceneSpec> {
    let s = &config.scene;
    SyntheticSceneSpec::three_band(s.height, s.width, s.looks, config.seed).with_class_contrast(s.class_contrast)
}

pub fn synthesize(config: &RunConfig) -> Result<(PolSarScene, LabelMap)> {
    synth_scene(&scene_spec(config)?)
}

/// Candidate positions, their patch-mean coherency samples and the fitted
/// cluster model over them.
#[derive(Debug, Clone)]
pub struct Clustering {
    pub positions: Vec<(usize, usize)>,
    pub samples: Vec<CoherencyMatrix>,
    pub model: ClusterModel,
}

impl Clustering {
    /// One line per candidate: index, position, cluster and distance to
    /// its prototype.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "sample_index,row,col,cluster_index,distance_to_prototype")?;
        for (i, &(r, c)) in self.positions.iter().enumerate() {
            writeln!(w, "{i},{r},{c},{},{:.12e}", self.model.assignments[i], self.model.distances[i])?;
        }
        Ok(())
    }
}

pub fn cluster(config: &RunConfig, scene: &PolSarScene) -> Result<Clustering> {
    let positions = candidate_grid(scene.height(), scene.width(), config.candidate_stride);
    let samples = candidate_samples(scene, &positions, config.patch_size)?;
    let k = config.num_clusters.min(samples.len());
    if k < config.num_clusters {
        log::warn!("only {} candidates; clustering with K = {k}", samples.len());
    }
    let model = wishart_cluster(&samples, k, config.cluster_max_iter, &mut stage_rng(config.seed, "cluster"))?;
    info!(
        "clustered {} candidates into {} clusters in {} iterations (converged: {})",
        samples.len(),
        model.num_clusters(),
        model.iterations_run,
        model.converged
    );
    Ok(Clustering { positions, samples, model })
}

pub fn collect(config: &RunConfig, scene: &PolSarScene, clustering: &Clustering) -> Result<PretrainDataset> {
    let params = CollectParams {
        gamma: config.gamma,
        per_cluster: config.samples_per_cluster,
        patch_size: config.patch_size,
        seed: config.seed,
    };
    let dataset = collect_dataset(scene, &clustering.positions, &clustering.samples, &clustering.model, &params)?;
    info!("collected {} anchor patches", dataset.len());
    Ok(dataset)
}

/// Fits the input standardizer on the scene and pretrains on the
/// standardized anchors.
pub fn pretrain_on(
    config: &RunConfig,
    scene: &PolSarScene,
    raw_anchors: &[PatchTensor],
) -> Result<(PretrainOutcome, Standardizer)> {
    let standardizer = Standardizer::fit(scene);
    let anchors: Vec<PatchTensor> = raw_anchors.iter().map(|p| standardizer.apply(p)).collect::<Result<_>>()?;
    let outcome = pretrain(&anchors, &config.encoder_plan(), &config.pretrain_config())?;
    if let Some(last) = outcome.epoch_mean_losses().last() {
        info!("pretraining done, final epoch loss {last:.5}");
    }
    Ok((outcome, standardizer))
}

pub fn pretrained_checkpoint(config: &RunConfig, outcome: &PretrainOutcome, standardizer: &Standardizer) -> Result<Checkpoint> {
    Checkpoint::from_network(&outcome.state.main, standardizer, config.patch_size)
}

/// The untrained encoder the pretraining run starts from: the control arm
/// for few-shot comparisons.
pub fn random_extractor(config: &RunConfig, scene: &PolSarScene) -> FeatureExtractor {
    let plan = config.encoder_plan();
    FeatureExtractor {
        standardizer: Standardizer::fit(scene),
        encoder: ConvEncoder::init(&plan, &mut stage_rng(config.seed, "pretrain-init")),
        patch_size: plan.patch_size,
    }
}

/// Draws `shots` labeled pixels per class.
pub fn training_pixels(config: &RunConfig, labels: &LabelMap, shots: usize) -> Result<Vec<LabeledPixel>> {
    sample_labeled_positions(labels, shots, &mut stage_rng(config.seed, "shots"))
}

/// Draws up to `per_class` labeled pixels per class that are not training
/// pixels.
pub fn validation_pixels(
    config: &RunConfig,
    labels: &LabelMap,
    train: &[LabeledPixel],
    per_class: usize,
) -> Vec<LabeledPixel> {
    let taken: HashSet<(usize, usize)> = train.iter().map(|&(r, c, _)| (r, c)).collect();
    let mut by_class: Vec<Vec<LabeledPixel>> = vec![Vec::new(); labels.num_classes() as usize];
    for p in labels.labeled_positions() {
        if !taken.contains(&(p.0, p.1)) {
            by_class[p.2 as usize - 1].push(p);
        }
    }
    let mut rng = stage_rng(config.seed, "validation");
    let mut out = Vec::new();
    for pool in &mut by_class {
        pool.shuffle(&mut rng);
        let mut picked: Vec<_> = pool.iter().take(per_class).copied().collect();
        picked.sort_unstable();
        out.extend(picked);
    }
    out
}

/// Trains the linear head on frozen features of the given pixels.
pub fn finetune_head(
    config: &RunConfig,
    scene: &PolSarScene,
    extractor: &FeatureExtractor,
    num_classes: usize,
    pixels: &[LabeledPixel],
) -> Result<LinearClassifier> {
    let labeled: Vec<(PatchTensor, u32)> =
        pixels.iter().map(|&(r, c, y)| Ok((extractor.patch(scene, r, c)?, y))).collect::<Result<_>>()?;
    finetune(&extractor.encoder, &labeled, num_classes, &config.finetune_config())
}

/// Fraction of `pixels` whose predicted class matches their label.
pub fn pixel_accuracy(
    scene: &PolSarScene,
    extractor: &FeatureExtractor,
    classifier: &LinearClassifier,
    pixels: &[LabeledPixel],
) -> Result<f64> {
    if pixels.is_empty() {
        return Err(Error::NoLabeledPixels);
    }
    let positions: Vec<(usize, usize)> = pixels.iter().map(|&(r, c, _)| (r, c)).collect();
    let probs = classifier.probabilities(&extractor.features_at(scene, &positions)?)?;
    let hits = probs
        .iter()
        .zip(pixels)
        .filter(|(p, &(_, _, y))| pclnet_core::classify::argmax(p) as u32 + 1 == y)
        .count();
    Ok(hits as f64 / pixels.len() as f64)
}

/// Appends the classifier to a pretrained checkpoint.
pub fn classifier_checkpoint(pretrained: &Checkpoint, classifier: &LinearClassifier) -> Checkpoint {
    let mut ck = pretrained.clone();
    ck.tensors.retain(|(name, _)| !name.starts_with("classifier."));
    ck.push_parameters(classifier);
    ck
}

pub fn predict(scene: &PolSarScene, extractor: &FeatureExtractor, classifier: &LinearClassifier) -> Result<LabelMap> {
    predict_map(scene, extractor, classifier)
}

/// Reports over all labeled pixels and over labeled pixels that were not
/// used for training.
#[derive(Debug, Clone)]
pub struct Reports {
    pub all: EvalReport,
    pub held_out: Option<EvalReport>,
}

pub fn evaluate_prediction(prediction: &LabelMap, truth: &LabelMap, train: Option<&[LabeledPixel]>) -> Result<Reports> {
    let all = evaluate(prediction, truth)?;
    let held_out = match train {
        Some(train) => {
            let width = truth.width();
            let taken: HashSet<usize> = train.iter().map(|&(r, c, _)| r * width + c).collect();
            Some(evaluate_masked(prediction, truth, |i| !taken.contains(&i))?)
        }
        None => None,
    };
    Ok(Reports { all, held_out })
}

/// Writes `row,col,label` lines.
pub fn write_pixels_csv<W: std::io::Write>(pixels: &[LabeledPixel], mut w: W) -> std::io::Result<()> {
    writeln!(w, "row,col,label")?;
    for (r, c, y) in pixels {
        writeln!(w, "{r},{c},{y}")?;
    }
    Ok(())
}

/// Parses what [`write_pixels_csv`] writes.
pub fn parse_pixels_csv(text: &str) -> std::result::Result<Vec<LabeledPixel>, String> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "row,col,label")) => {}
        _ => return Err("missing `row,col,label` header".into()),
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let bad = || format!("line {}: expected row,col,label", i + 1);
            let mut it = line.split(',').map(str::trim);
            let mut next = || it.next().ok_or_else(bad);
            let r = next()?.parse().map_err(|_| bad())?;
            let c = next()?.parse().map_err(|_| bad())?;
            let y = next()?.parse().map_err(|_| bad())?;
            Ok((r, c, y))
        })
        .collect()
}

/// `row,col,label,h0..h{d-1}` for every labeled pixel.
pub fn write_features_csv<W: std::io::Write>(
    scene: &PolSarScene,
    labels: &LabelMap,
    extractor: &FeatureExtractor,
    mut w: W,
) -> anyhow::Result<()> {
    let pixels = labels.labeled_positions();
    if pixels.is_empty() {
        return Err(Error::NoLabeledPixels.into());
    }
    let dim = extractor.encoder.feature_dim();
    write!(w, "row,col,label")?;
    for j in 0..dim {
        write!(w, ",h{j}")?;
    }
    writeln!(w)?;
    for chunk in pixels.chunks(1024) {
        let positions: Vec<(usize, usize)> = chunk.iter().map(|&(r, c, _)| (r, c)).collect();
        let feats = extractor.features_at(scene, &positions)?;
        for (i, &(r, c, y)) in chunk.iter().enumerate() {
            write!(w, "{r},{c},{y}")?;
            for v in &feats.data()[i * dim..(i + 1) * dim] {
                write!(w, ",{v:e}")?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pixels_csv_round_trips() {
        let px = vec![(0, 1, 2), (10, 3, 1)];
        let mut buf = Vec::new();
        write_pixels_csv(&px, &mut buf).unwrap();
        assert_eq!(parse_pixels_csv(std::str::from_utf8(&buf).unwrap()).unwrap(), px);
        assert!(parse_pixels_csv("row,col,label\n1,2\n").unwrap_err().contains("line 2"));
        assert!(parse_pixels_csv("x\n").is_err());
    }

    #[test]
    fn validation_pixels_avoid_training_pixels() {
        let labels = LabelMap::new(4, 6, 2, (0..24).map(|i| if i % 6 < 3 { 1 } else { 2 }).collect()).unwrap();
        let cfg = RunConfig::default();
        let train = training_pixels(&cfg, &labels, 3).unwrap();
        assert_eq!(train.len(), 6);
        let val = validation_pixels(&cfg, &labels, &train, 100);
        assert_eq!(val.len(), 18);
        assert!(val.iter().all(|v| !train.iter().any(|t| (t.0, t.1) == (v.0, v.1))));
    }

    #[test]
    fn held_out_report_excludes_training_pixels() {
        let truth = LabelMap::new(1, 4, 2, vec![1, 1, 2, 2]).unwrap();
        let pred = LabelMap::new(1, 4, 2, vec![1, 2, 2, 2]).unwrap();
        let r = evaluate_prediction(&pred, &truth, Some(&[(0, 1, 1)])).unwrap();
        assert_eq!(r.all.overall_accuracy, 0.75);
        let held = r.held_out.unwrap();
        assert_eq!((held.total, held.overall_accuracy), (3, 1.0));
    }
}
