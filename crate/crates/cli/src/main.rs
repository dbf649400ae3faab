use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::info;
use pclnet_core::io::{self, Checkpoint};
use pclnet_core::polsar::{LabelMap, PolSarScene};

use pclnet_cli::config::RunConfig;
use pclnet_cli::pipeline::{self, LabeledPixel};
use pclnet_cli::selfcheck;

#[derive(Debug, Parser)]
#[command(name = "pclnet", version, about = "Contrastive pretraining and few-shot classification for PolSAR scenes")]
struct Cli {
    /// TOML run configuration; omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 gives bit-reproducible output.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory (default: `paths.out`, else `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic three-class scene and its ground truth.
    Synth,
    /// Cluster candidate patches with the Wishart distance.
    Cluster {
        #[arg(long)]
        scene: Option<PathBuf>,
    },
    /// Cluster, prune each cluster for diversity and save the anchor patches.
    Collect {
        #[arg(long)]
        scene: Option<PathBuf>,
    },
    /// Contrastive pretraining of the encoder.
    Pretrain {
        #[arg(long)]
        scene: Option<PathBuf>,
        /// Anchor patches from `collect`; collected in-process when omitted.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Train the linear classifier on a few labeled pixels per class.
    Finetune {
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Pretrained checkpoint.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Labeled pixels per class (default: `finetune.shots_per_class`).
        #[arg(long)]
        shots: Option<usize>,
        /// Extra held-out pixels per class to report validation accuracy on.
        #[arg(long, default_value_t = 0)]
        validation: usize,
    },
    /// Classify every pixel of a scene.
    Predict {
        #[arg(long)]
        scene: Option<PathBuf>,
        /// Checkpoint with a trained classifier.
        #[arg(long)]
        ckpt: Option<PathBuf>,
    },
    /// Accuracy report of a prediction against ground truth.
    Eval {
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Predicted map; when omitted the scene is predicted with `--ckpt`.
        #[arg(long)]
        prediction: Option<PathBuf>,
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Training pixels to exclude for the held-out report.
        #[arg(long)]
        train_pixels: Option<PathBuf>,
    },
    /// Dump encoder features of every labeled pixel as CSV.
    Features {
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        ckpt: Option<PathBuf>,
    },
    /// Run the built-in oracle and gradient checks.
    Selfcheck,
}

struct Run {
    config: RunConfig,
    out: PathBuf,
}

impl Run {
    fn output(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Creates the output directory and echoes the effective configuration.
    fn prepare(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out).with_context(|| format!("cannot create {}", self.out.display()))?;
        let echo = self.output("effective_config.toml");
        std::fs::write(&echo, self.config.to_toml()).with_context(|| format!("cannot write {}", echo.display()))
    }

    fn write_with(&self, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<PathBuf> {
        let path = self.output(name);
        let file = File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
        let mut w = BufWriter::new(file);
        f(&mut w).and_then(|_| w.flush()).with_context(|| format!("cannot write {}", path.display()))?;
        Ok(path)
    }

    fn scene(&self, flag: Option<PathBuf>) -> Result<PolSarScene> {
        let path = input(flag, &self.config.paths.scene, "scene")?;
        Ok(io::read_scene(&path)?)
    }

    fn labels(&self, flag: Option<PathBuf>) -> Result<LabelMap> {
        let path = input(flag, &self.config.paths.labels, "labels")?;
        Ok(io::read_labels(&path)?)
    }

    fn checkpoint(&self, flag: Option<PathBuf>) -> Result<Checkpoint> {
        let path = input(flag, &self.config.paths.checkpoint, "checkpoint")?;
        Ok(Checkpoint::read(&path)?)
    }
}

/// Resolves an input from its flag or the config, checking that it exists.
fn input(flag: Option<PathBuf>, configured: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    let Some(path) = flag.or_else(|| configured.clone()) else {
        bail!("{what} not found: no path given (pass --{} or set paths.{what})", flag_name(what));
    };
    require(&path, what)?;
    Ok(path)
}

fn flag_name(what: &str) -> &str {
    match what {
        "checkpoint" => "ckpt",
        other => other,
    }
}

fn require(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        bail!("{what} not found: {}", path.display());
    }
    Ok(())
}

fn classifier_of(ck: &Checkpoint) -> Result<pclnet_core::classify::LinearClassifier> {
    ck.classifier()?.context("checkpoint has no classifier; run `finetune` first")
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be >= 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("cannot configure thread pool")?;
    }
    if let Command::Selfcheck = cli.command {
        return run_selfcheck();
    }
    let mut config = match &cli.config {
        Some(path) => {
            require(path, "config")?;
            RunConfig::load(path)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let out = cli.out.or_else(|| config.paths.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let cx = Run { config, out };
    let cfg = &cx.config;

    match cli.command {
        Command::Selfcheck => unreachable!("handled above"),
        Command::Synth => {
            let (scene, labels) = pipeline::synthesize(cfg)?;
            cx.prepare()?;
            io::write_scene(&cx.output("scene.t3b"), &scene)?;
            io::write_labels(&cx.output("labels.lbl"), &labels)?;
            info!("wrote {}x{} scene to {}", scene.height(), scene.width(), cx.out.display());
        }
        Command::Cluster { scene } => {
            let scene = cx.scene(scene)?;
            let clustering = pipeline::cluster(cfg, &scene)?;
            cx.prepare()?;
            cx.write_with("clusters.csv", |w| clustering.write_csv(w))?;
        }
        Command::Collect { scene } => {
            let scene = cx.scene(scene)?;
            let clustering = pipeline::cluster(cfg, &scene)?;
            let dataset = pipeline::collect(cfg, &scene, &clustering)?;
            cx.prepare()?;
            cx.write_with("clusters.csv", |w| clustering.write_csv(w))?;
            io::write_patches(&cx.output("dataset.pds"), &dataset.patches)?;
            cx.write_with("manifest.csv", |w| dataset.write_manifest(w))?;
        }
        Command::Pretrain { scene, dataset } => {
            let scene = cx.scene(scene)?;
            let anchors = match dataset {
                Some(path) => {
                    require(&path, "dataset")?;
                    let patches = io::read_patches(&path)?;
                    if let Some(p) = patches.iter().find(|p| p.height() != cfg.patch_size) {
                        bail!("{}: patches are {}x{}, config expects patch_size {}", path.display(), p.height(), p.width(), cfg.patch_size);
                    }
                    patches
                }
                None => {
                    let clustering = pipeline::cluster(cfg, &scene)?;
                    pipeline::collect(cfg, &scene, &clustering)?.patches
                }
            };
            let (outcome, standardizer) = pipeline::pretrain_on(cfg, &scene, &anchors)?;
            cx.prepare()?;
            pipeline::pretrained_checkpoint(cfg, &outcome, &standardizer)?.write(&cx.output("pretrained.ckpt"))?;
            cx.write_with("loss_trace.csv", |w| outcome.write_trace_csv(w))?;
        }
        Command::Finetune { scene, labels, ckpt, shots, validation } => {
            let scene = cx.scene(scene)?;
            let labels = cx.labels(labels)?;
            let ck = cx.checkpoint(ckpt)?;
            if !labels.same_shape(&scene) {
                bail!("labels and scene differ in size");
            }
            let extractor = ck.feature_extractor()?;
            let shots = shots.unwrap_or(cfg.finetune.shots_per_class);
            if shots == 0 {
                bail!("--shots must be >= 1");
            }
            let train = pipeline::training_pixels(cfg, &labels, shots)?;
            let classifier = pipeline::finetune_head(cfg, &scene, &extractor, labels.num_classes() as usize, &train)?;
            cx.prepare()?;
            pipeline::classifier_checkpoint(&ck, &classifier).write(&cx.output("classifier.ckpt"))?;
            cx.write_with("training_pixels.csv", |w| pipeline::write_pixels_csv(&train, w))?;
            if validation > 0 {
                let val = pipeline::validation_pixels(cfg, &labels, &train, validation);
                let acc = pipeline::pixel_accuracy(&scene, &extractor, &classifier, &val)?;
                info!("validation accuracy {acc:.4} on {} pixels", val.len());
                cx.write_with("validation.txt", |w| writeln!(w, "pixels: {}\naccuracy: {acc:.6}", val.len()))?;
            }
        }
        Command::Predict { scene, ckpt } => {
            let ck = cx.checkpoint(ckpt)?;
            let classifier = classifier_of(&ck)?;
            let scene = cx.scene(scene)?;
            let prediction = pipeline::predict(&scene, &ck.feature_extractor()?, &classifier)?;
            cx.prepare()?;
            io::write_labels(&cx.output("prediction.lbl"), &prediction)?;
            io::write_label_png(&cx.output("prediction.png"), &prediction)?;
        }
        Command::Eval { labels, prediction, scene, ckpt, train_pixels } => {
            let truth = cx.labels(labels)?;
            let prediction = match prediction {
                Some(path) => {
                    require(&path, "prediction")?;
                    io::read_labels(&path)?
                }
                None => {
                    let ck = cx.checkpoint(ckpt)?;
                    let classifier = classifier_of(&ck)?;
                    let scene = cx.scene(scene)?;
                    pipeline::predict(&scene, &ck.feature_extractor()?, &classifier)?
                }
            };
            let train: Option<Vec<LabeledPixel>> = match train_pixels {
                Some(path) => {
                    require(&path, "training pixels")?;
                    let text = std::fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
                    Some(pipeline::parse_pixels_csv(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?)
                }
                None => None,
            };
            let reports = pipeline::evaluate_prediction(&prediction, &truth, train.as_deref())?;
            cx.prepare()?;
            cx.write_with("report.txt", |w| reports.all.write_report(w))?;
            cx.write_with("confusion.csv", |w| reports.all.write_confusion_csv(w))?;
            if let Some(held) = &reports.held_out {
                cx.write_with("report_held_out.txt", |w| held.write_report(w))?;
                cx.write_with("confusion_held_out.csv", |w| held.write_confusion_csv(w))?;
            }
            let r = &reports.all;
            println!("OA {:.4}  AA {:.4}  kappa {:.4}", r.overall_accuracy, r.average_accuracy, r.kappa);
        }
        Command::Features { scene, labels, ckpt } => {
            let scene = cx.scene(scene)?;
            let labels = cx.labels(labels)?;
            let extractor = cx.checkpoint(ckpt)?.feature_extractor()?;
            if !labels.same_shape(&scene) {
                bail!("labels and scene differ in size");
            }
            cx.prepare()?;
            let path = cx.output("features.csv");
            let mut w = BufWriter::new(File::create(&path).with_context(|| format!("cannot create {}", path.display()))?);
            pipeline::write_features_csv(&scene, &labels, &extractor, &mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn run_selfcheck() -> Result<()> {
    let checks = selfcheck::run();
    let mut failed = 0;
    for c in &checks {
        println!("{:4} {} ({})", if c.passed { "ok" } else { "FAIL" }, c.name, c.detail);
        failed += usize::from(!c.passed);
    }
    if failed > 0 {
        bail!("{failed} of {} self-checks failed", checks.len());
    }
    println!("all {} self-checks passed", checks.len());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PCLNET_LOG", "info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
