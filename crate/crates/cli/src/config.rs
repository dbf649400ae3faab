//! Run configuration: a TOML file of `key = value` pairs with `[section]`
//! headers. Omitted keys take their defaults, unknown keys are rejected and
//! every constraint is checked at load time.

use std::fmt;
use std::path::{Path, PathBuf};

use pclnet_core::classify::FinetuneConfig;
use pclnet_core::contrastive::PretrainConfig;
use pclnet_core::nn::{EncoderPlan, SgdConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub num_clusters: usize,
    pub cluster_max_iter: usize,
    pub gamma: f64,
    pub samples_per_cluster: usize,
    pub patch_size: usize,
    pub candidate_stride: usize,
    pub scene: SceneSection,
    pub pretrain: PretrainSection,
    pub finetune: FinetuneSection,
    pub paths: PathsSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            num_clusters: 35,
            cluster_max_iter: 50,
            gamma: 0.42,
            samples_per_cluster: 600,
            patch_size: 15,
            candidate_stride: 4,
            scene: SceneSection::default(),
            pretrain: PretrainSection::default(),
            finetune: FinetuneSection::default(),
            paths: PathsSection::default(),
        }
    }
}

/// Synthetic scene for `synth`: three vertical class bands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSection {
    pub height: usize,
    pub width: usize,
    pub looks: u32,
    /// 1 keeps the built-in class covariances; smaller values pull them
    /// towards their mean.
    pub class_contrast: f64,
}

impl Default for SceneSection {
    fn default() -> Self {
        SceneSection { height: 64, width: 192, looks: 8, class_contrast: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainSection {
    pub epochs: usize,
    pub learning_rate: f64,
    pub milestones: Vec<usize>,
    pub factor: f64,
    pub batch_size: usize,
    pub bank_capacity: usize,
    pub momentum: f64,
    pub temperature: f64,
}

impl Default for PretrainSection {
    fn default() -> Self {
        PretrainSection {
            epochs: 800,
            learning_rate: 0.1,
            milestones: vec![300, 500],
            factor: 0.5,
            batch_size: 512,
            bank_capacity: 8192,
            momentum: 0.999,
            temperature: 0.4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneSection {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub shots_per_class: usize,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        FinetuneSection { epochs: 300, learning_rate: 0.01, batch_size: 32, shots_per_class: 20 }
    }
}

/// Default input/output locations; command-line flags take precedence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub out: Option<PathBuf>,
    pub scene: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: PathBuf,
    pub line: Option<usize>,
    pub key: Option<String>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.path.display())?;
        if let Some(line) = self.line {
            write!(f, ":{line}")?;
        }
        if let Some(key) = &self.key {
            write!(f, ": key `{key}`")?;
        }
        write!(f, ": {}", self.message)
    }
}

impl std::error::Error for ConfigError {}

/// A constraint violation: dotted key and message.
type Violation = (&'static str, String);

fn check(ok: bool, key: &'static str, message: &str) -> Result<(), Violation> {
    if ok {
        Ok(())
    } else {
        Err((key, message.to_string()))
    }
}

impl RunConfig {
    /// Reads and validates a config file.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let source = std::fs::read_to_string(path).map_err(|e| ConfigError {
            path: path.to_path_buf(),
            line: None,
            key: None,
            message: format!("cannot read config: {e}"),
        })?;
        Self::parse(&source, path)
    }

    /// Parses config text; `origin` is only used in error messages.
    pub fn parse(source: &str, origin: &Path) -> Result<Self, ConfigError> {
        let config: RunConfig = toml::from_str(source).map_err(|e| ConfigError {
            path: origin.to_path_buf(),
            line: e.span().map(|s| line_of_offset(source, s.start)),
            key: None,
            message: e.message().trim().to_string(),
        })?;
        config.validate().map_err(|(key, message)| ConfigError {
            path: origin.to_path_buf(),
            line: line_of_key(source, key),
            key: Some(key.to_string()),
            message,
        })?;
        Ok(config)
    }

    /// The effective configuration as TOML; parses back to an equal value.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn validate(&self) -> Result<(), Violation> {
        check(self.num_clusters >= 1, "num_clusters", "num_clusters must be >= 1")?;
        check(self.cluster_max_iter >= 1, "cluster_max_iter", "cluster_max_iter must be >= 1")?;
        check(self.gamma > 0.0 && self.gamma.is_finite(), "gamma", "gamma must be > 0")?;
        check(self.samples_per_cluster >= 1, "samples_per_cluster", "samples_per_cluster must be >= 1")?;
        check(!self.patch_size.is_multiple_of(2), "patch_size", "patch_size must be odd")?;
        self.encoder_plan().validate().map_err(|e| ("patch_size", e.to_string()))?;
        check(self.candidate_stride >= 1, "candidate_stride", "candidate_stride must be >= 1")?;

        let s = &self.scene;
        check(s.height >= 1, "scene.height", "height must be >= 1")?;
        check(s.width >= 3, "scene.width", "width must be >= 3 (one band per class)")?;
        check(s.looks >= 1, "scene.looks", "looks must be >= 1")?;
        check((0.0..=1.0).contains(&s.class_contrast), "scene.class_contrast", "class_contrast must be in [0, 1]")?;

        let p = &self.pretrain;
        check(p.epochs >= 1, "pretrain.epochs", "epochs must be >= 1")?;
        check(p.learning_rate > 0.0 && p.learning_rate.is_finite(), "pretrain.learning_rate", "learning_rate must be > 0")?;
        check(p.factor > 0.0 && p.factor <= 1.0, "pretrain.factor", "factor must be in (0, 1]")?;
        check(p.batch_size >= 1, "pretrain.batch_size", "batch_size must be >= 1")?;
        check(
            p.bank_capacity >= 1 && p.bank_capacity.is_multiple_of(p.batch_size),
            "pretrain.bank_capacity",
            "bank_capacity must be a positive multiple of batch_size",
        )?;
        check(p.momentum > 0.0 && p.momentum < 1.0, "pretrain.momentum", "momentum must be in (0, 1)")?;
        check(p.temperature > 0.0 && p.temperature.is_finite(), "pretrain.temperature", "temperature must be > 0")?;
        self.pretrain_config().validate().map_err(|e| ("pretrain", e.to_string()))?;

        let f = &self.finetune;
        check(f.epochs >= 1, "finetune.epochs", "epochs must be >= 1")?;
        check(f.learning_rate > 0.0 && f.learning_rate.is_finite(), "finetune.learning_rate", "learning_rate must be > 0")?;
        check(f.batch_size >= 1, "finetune.batch_size", "batch_size must be >= 1")?;
        check(f.shots_per_class >= 1, "finetune.shots_per_class", "shots_per_class must be >= 1")?;
        self.finetune_config().validate().map_err(|e| ("finetune", e.to_string()))
    }

    pub fn encoder_plan(&self) -> EncoderPlan {
        EncoderPlan { patch_size: self.patch_size, ..EncoderPlan::default() }
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        let p = &self.pretrain;
        PretrainConfig {
            epochs: p.epochs,
            batch_size: p.batch_size,
            bank_capacity: p.bank_capacity,
            momentum: p.momentum,
            temperature: p.temperature,
            sgd: SgdConfig { learning_rate: p.learning_rate, milestones: p.milestones.clone(), factor: p.factor },
            seed: self.seed,
        }
    }

    pub fn finetune_config(&self) -> FinetuneConfig {
        let f = &self.finetune;
        FinetuneConfig { epochs: f.epochs, learning_rate: f.learning_rate, batch_size: f.batch_size, seed: self.seed }
    }
}

/// 1-based line containing byte `offset`.
fn line_of_offset(source: &str, offset: usize) -> usize {
    source[..offset.min(source.len())].matches('\n').count() + 1
}

/// 1-based line on which a dotted key (`section.key` or top-level `key`) is
/// assigned, if it appears literally in the source.
fn line_of_key(source: &str, dotted: &str) -> Option<usize> {
    let (section, key) = dotted.rsplit_once('.').unwrap_or(("", dotted));
    let mut current = String::new();
    for (i, raw) in source.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if let Some(header) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = header.trim().to_string();
            if current == dotted {
                return Some(i + 1);
            }
            continue;
        }
        let Some((k, _)) = line.split_once('=') else {
            continue;
        };
        let k = k.trim();
        if (current == section && k == key) || (current.is_empty() && k == dotted) {
            return Some(i + 1);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<RunConfig, ConfigError> {
        RunConfig::parse(s, Path::new("run.toml"))
    }

    #[test]
    fn empty_file_gives_defaults() {
        let c = parse("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.gamma, 0.42);
        assert_eq!(c.samples_per_cluster, 600);
        assert_eq!(c.num_clusters, 35);
        assert_eq!(c.pretrain.epochs, 800);
        assert_eq!(c.pretrain.batch_size, 512);
        assert_eq!(c.pretrain.bank_capacity, 8192);
        assert_eq!(c.pretrain.momentum, 0.999);
        assert_eq!(c.pretrain.temperature, 0.4);
        assert_eq!(c.pretrain.milestones, vec![300, 500]);
        assert_eq!((c.finetune.epochs, c.finetune.learning_rate, c.finetune.batch_size), (300, 0.01, 32));
    }

    #[test]
    fn negative_temperature_names_key_and_line() {
        let err = parse("seed = 3\n\n[pretrain]\nepochs = 2\ntemperature = -1\n").unwrap_err();
        assert!(err.message.contains("temperature must be > 0"), "{err}");
        assert_eq!(err.line, Some(5));
        assert_eq!(err.key.as_deref(), Some("pretrain.temperature"));
        assert_eq!(err.to_string(), "run.toml:5: key `pretrain.temperature`: temperature must be > 0");
    }

    #[test]
    fn unknown_key_is_rejected_with_line() {
        let err = parse("gamma = 0.5\nbogus = 1\n").unwrap_err();
        assert!(err.message.contains("bogus"), "{err}");
        assert_eq!(err.line, Some(2));
        let err = parse("[finetune]\nshots = 5\n").unwrap_err();
        assert!(err.message.contains("shots"), "{err}");
    }

    #[test]
    fn type_mismatch_is_rejected() {
        let err = parse("[pretrain]\n\nbatch_size = \"big\"\n").unwrap_err();
        assert_eq!(err.line, Some(3), "{err}");
    }

    #[test]
    fn effective_config_round_trips() {
        let mut c = parse("seed = 9\n[scene]\nclass_contrast = 0.2\n[paths]\nout = \"runs/a\"\n").unwrap();
        assert_eq!(parse(&c.to_toml()).unwrap(), c);
        c.pretrain.milestones.clear();
        c.paths.scene = Some("s.t3b".into());
        assert_eq!(parse(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn module_constraints_are_rechecked() {
        let err = parse("[pretrain]\nbatch_size = 64\nbank_capacity = 100\n").unwrap_err();
        assert_eq!(err.line, Some(3));
        assert!(parse("patch_size = 14").is_err());
        assert!(parse("patch_size = 5").unwrap_err().message.contains("too small"));
        assert!(parse("[pretrain]\nmomentum = 1.0").is_err());
        assert!(parse("[scene]\nclass_contrast = 2").is_err());
    }
}
