use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
seed = 3
num_clusters = 3
samples_per_cluster = 16
patch_size = 9

[scene]
height = 18
width = 36

[pretrain]
epochs = 2
batch_size = 8
bank_capacity = 16

[finetune]
epochs = 10
shots_per_class = 4
";

fn pclnet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pclnet"))
        .current_dir(dir)
        .args(args)
        .env("PCLNET_LOG", "error")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let o = pclnet(dir, args);
    assert!(o.status.success(), "pclnet {args:?} failed: {}", stderr(&o));
    o
}

#[test]
fn selfcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = ok(dir.path(), &["selfcheck"]);
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("self-checks passed"), "{out}");
    assert!(!out.contains("FAIL"));
}

#[test]
fn predict_without_checkpoint_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = pclnet(dir.path(), &["predict", "--scene", "scene.t3b", "--ckpt", "missing.ckpt"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("checkpoint not found: missing.ckpt"), "{}", stderr(&o));
    let o = pclnet(dir.path(), &["predict", "--scene", "scene.t3b"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("checkpoint not found"), "{}", stderr(&o));
    assert!(!dir.path().join("out").exists(), "no output on failure");
}

#[test]
fn missing_inputs_are_named() {
    let dir = tempfile::tempdir().unwrap();
    let o = pclnet(dir.path(), &["cluster", "--scene", "nowhere.t3b"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("scene not found: nowhere.t3b"));
    let o = pclnet(dir.path(), &["--config", "absent.toml", "synth"]);
    assert!(stderr(&o).contains("config not found: absent.toml"));
    let o = pclnet(dir.path(), &["eval", "--labels", "truth.lbl"]);
    assert!(stderr(&o).contains("labels not found: truth.lbl"));
}

#[test]
fn config_errors_name_key_and_line() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("neg.toml"), "seed = 1\n[pretrain]\ntemperature = -1\n").unwrap();
    let o = pclnet(dir.path(), &["--config", "neg.toml", "synth"]);
    assert!(!o.status.success());
    let e = stderr(&o);
    assert!(e.contains("neg.toml:3") && e.contains("pretrain.temperature") && e.contains("temperature must be > 0"), "{e}");

    std::fs::write(dir.path().join("unknown.toml"), "[finetune]\nepochs = 3\nwarmup = 2\n").unwrap();
    let e = stderr(&pclnet(dir.path(), &["--config", "unknown.toml", "synth"]));
    assert!(e.contains("unknown.toml:3") && e.contains("warmup"), "{e}");

    std::fs::write(dir.path().join("type.toml"), "gamma = \"high\"\n").unwrap();
    let e = stderr(&pclnet(dir.path(), &["--config", "type.toml", "synth"]));
    assert!(e.contains("type.toml:1"), "{e}");
}

#[test]
fn chained_pipeline_produces_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("run.toml"), TINY).unwrap();
    let base = ["--config", "run.toml", "--out", "out"];
    let with = |rest: &[&str]| -> Vec<String> { base.iter().chain(rest).map(|s| s.to_string()).collect() };
    let run = |rest: &[&str]| {
        let args = with(rest);
        ok(d, &args.iter().map(String::as_str).collect::<Vec<_>>())
    };
    run(&["synth"]);
    run(&["collect", "--scene", "out/scene.t3b"]);
    run(&["pretrain", "--scene", "out/scene.t3b", "--dataset", "out/dataset.pds"]);
    run(&["finetune", "--scene", "out/scene.t3b", "--labels", "out/labels.lbl", "--ckpt", "out/pretrained.ckpt", "--shots", "3"]);
    let o = run(&["eval", "--labels", "out/labels.lbl", "--scene", "out/scene.t3b", "--ckpt", "out/classifier.ckpt", "--train-pixels", "out/training_pixels.csv"]);
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("OA "));

    let out = d.join("out");
    let report = std::fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(report.contains("\"overall_accuracy\"") && report.contains("\"kappa\""), "{report}");
    assert!(out.join("report_held_out.txt").is_file());
    assert_eq!(std::fs::read_to_string(out.join("training_pixels.csv")).unwrap().lines().count(), 1 + 3 * 3);

    // the effective config echo re-parses to the configuration that ran
    let echo = std::fs::read_to_string(out.join("effective_config.toml")).unwrap();
    let parsed = pclnet_cli::config::RunConfig::parse(&echo, Path::new("echo")).unwrap();
    assert_eq!(parsed, pclnet_cli::config::RunConfig::parse(TINY, Path::new("run.toml")).unwrap());

    let trace = std::fs::read_to_string(out.join("loss_trace.csv")).unwrap();
    assert!(trace.starts_with("epoch,step,loss,learning_rate,bank_fill"));

    run(&["predict", "--scene", "out/scene.t3b", "--ckpt", "out/classifier.ckpt"]);
    let png = std::fs::read(out.join("prediction.png")).unwrap();
    assert_eq!(&png[..8], b"\x89PNG\r\n\x1a\n");

    run(&["features", "--scene", "out/scene.t3b", "--labels", "out/labels.lbl", "--ckpt", "out/pretrained.ckpt"]);
    let features = std::fs::read_to_string(out.join("features.csv")).unwrap();
    let mut lines = features.lines();
    assert_eq!(lines.next().unwrap().split(',').count(), 3 + 64);
    assert_eq!(lines.count(), 18 * 36);
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("run.toml"), TINY).unwrap();
    ok(d, &["--config", "run.toml", "--out", "a", "synth"]);
    ok(d, &["--config", "run.toml", "--out", "b", "--seed", "4", "synth"]);
    assert_ne!(std::fs::read(d.join("a/scene.t3b")).unwrap(), std::fs::read(d.join("b/scene.t3b")).unwrap());
    assert!(std::fs::read_to_string(d.join("b/effective_config.toml")).unwrap().contains("seed = 4"));
}
