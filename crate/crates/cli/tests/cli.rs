use std::path::Path;
use std::process::{Command, Output};

fn radseg(args: &[&str], config: Option<&Path>) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_radseg"));
    c.args(args).env("RUST_LOG", "warn").env_remove("RADSEG_SEED");
    if let Some(p) = config {
        c.arg("--config").arg(p);
    }
    c.output().unwrap()
}

fn ok(o: &Output) {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

/// Tiny geometry and schedules so every subcommand finishes in seconds.
fn tiny_config(dir: &Path) -> std::path::PathBuf {
    let p = dir.join("tiny.json");
    let cfg = serde_json::json!({
        "seed": 3,
        "geometry": {"range_bins": 32, "angle_bins": 32, "doppler_bins": 16},
        "simulation": {"worlds": 2, "frames_per_world": 6, "train_worlds": 1, "val_worlds": 0.5, "test_worlds": 0.5},
        "detector": {"train": {"epochs": 1}},
        "segmenter": {"train": {"epochs": 1}},
        "pruning": {"fine_tune_epochs": 1}
    });
    std::fs::write(&p, cfg.to_string()).unwrap();
    p
}

#[test]
fn missing_dataset_is_a_usage_error_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = radseg(
        &["train-detect", "--data", dir.path().join("nope").to_str().unwrap(), "--out", out.to_str().unwrap()],
        None,
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn bad_overrides_and_arguments_exit_2() {
    let o = radseg(&["--set", "detector.nonsense=1", "report", "x.json"], None);
    assert_eq!(o.status.code(), Some(2));
    let o = radseg(&["--set", "geometry.range_bins=60", "simulate", "--out", "/nonexistent/never"], None);
    assert_eq!(o.status.code(), Some(2));
    let o = radseg(&["eval", "--data", "x"], None);
    assert_eq!(o.status.code(), Some(2));
    let o = radseg(&["report", "/definitely/not/here.json"], None);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn seed_from_environment_must_parse() {
    let o = Command::new(env!("CARGO_BIN_EXE_radseg"))
        .args(["report", "x.json"])
        .env("RADSEG_SEED", "banana")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn full_pipeline_on_a_tiny_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let p = |s: &str| dir.path().join(s).to_string_lossy().into_owned();
    let c = Some(cfg.as_path());

    ok(&radseg(&["simulate", "--out", &p("data")], c));
    assert!(dir.path().join("data/manifest.json").is_file());

    ok(&radseg(&["eval", "--data", &p("data"), "--out", &p("oracle"), "--oracle", "--masks", "--sweep-dthresh"], c));
    let report = radseg(&["report", &p("oracle/metrics.json")], None);
    ok(&report);
    let text = String::from_utf8_lossy(&report.stdout);
    assert!(text.contains("mAP 1.000"), "{text}");
    assert!(text.contains("mIoU 1.000"), "{text}");
    assert!(std::fs::read_dir(dir.path().join("oracle/masks")).unwrap().count() > 0);
    assert!(dir.path().join("oracle/config.json").is_file());

    ok(&radseg(&["train-detect", "--data", &p("data"), "--out", &p("det")], c));
    assert!(dir.path().join("det/best.ckpt").is_file());
    assert!(dir.path().join("det/train_log.jsonl").is_file());
    let o = radseg(&["train-detect", "--data", &p("data"), "--out", &p("det"), "--resume"], c);
    ok(&o);

    ok(&radseg(&["train-seg", "--data", &p("data"), "--out", &p("seg")], c));
    ok(&radseg(
        &["eval", "--data", &p("data"), "--out", &p("eval"), "--detector", &p("det/best.ckpt"), "--segmenter", &p("seg/best.ckpt")],
        c,
    ));
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("eval/metrics.json")).unwrap()).unwrap();
    assert!(m["segmentation"].is_object() && m["baseline"].is_object());

    ok(&radseg(&["prune", "--data", &p("data"), "--out", &p("pruned"), "--checkpoint", &p("det/best.ckpt"), "--fraction", "0.3"], c));
    let r = radseg(&["report", &p("pruned/prune_report.json")], None);
    ok(&r);
    assert!(String::from_utf8_lossy(&r.stdout).contains("parameters"));
    ok(&radseg(
        &["prune", "--data", &p("data"), "--out", &p("pruned_seg"), "--checkpoint", &p("seg/best.ckpt"), "--model", "segmenter"],
        c,
    ));

    // a checkpoint of the wrong kind is a usage error
    let o = radseg(&["eval", "--data", &p("data"), "--out", &p("bad"), "--detector", &p("seg/best.ckpt")], c);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}
