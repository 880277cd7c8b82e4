use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use radseg_core::config::{RunConfig, SeedSource};
use radseg_core::detector::{evaluate_detector, load_detector, train_detector, DetTrainConfig, DetectorNet};
use radseg_core::eval::{IouReport, MetricsReport};
use radseg_core::fsutil::{create_dir_all, read_json, write_json_atomic};
use radseg_core::nn::Checkpoint;
use radseg_core::pipeline::{
    derive_seed, detector_fine_tune_config, detector_frames, evaluate_split, prune_detector, prune_segmenter,
    seg_samples, segmenter_fine_tune_config, simulate_dataset, DiskSplit, EvalOptions, FrameSource, Predictor,
    STREAM_DETECTOR_INIT, STREAM_DETECTOR_SHUFFLE, STREAM_SEGMENTER_INIT, STREAM_SEGMENTER_SHUFFLE,
};
use radseg_core::prune::PruneReport;
use radseg_core::run::RunFiles;
use radseg_core::sparse::{evaluate_segmenter, train_segmenter, SegNet, SegTrainConfig};

/// Radar semantic segmentation: simulate, train, evaluate and prune.
#[derive(Parser, Debug)]
#[command(name = "radseg", version)]
struct Cli {
    /// JSON run configuration; defaults apply to anything it leaves out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set detector.train.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Worker threads for per-frame work.
    #[arg(long, default_value_t = 1, global = true)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic dataset and its manifest.
    Simulate {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the center-point detector.
    TrainDetect {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        resume: bool,
    },
    /// Train the sparse segmenter on grown regions.
    TrainSeg {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Needed when the config grows training regions from detections.
        #[arg(long)]
        detector: Option<PathBuf>,
        #[arg(long)]
        resume: bool,
    },
    /// Run the pipeline on a split and write a metrics report.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, required_unless_present = "oracle")]
        detector: Option<PathBuf>,
        #[arg(long)]
        segmenter: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        /// Also report ground-truth-seeded region growing over the configured
        /// distance budgets.
        #[arg(long)]
        sweep_dthresh: bool,
        /// Write RA/RD masks as PPM images.
        #[arg(long)]
        masks: bool,
        /// Score the ground truth against itself.
        #[arg(long, conflicts_with_all = ["detector", "segmenter"])]
        oracle: bool,
    },
    /// Remove low-scale channels and fine-tune.
    Prune {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value_t = Model::Detector)]
        model: Model,
        /// Overrides `pruning.fraction`.
        #[arg(long)]
        fraction: Option<f64>,
    },
    /// Pretty-print a metrics or prune report.
    Report { path: PathBuf },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Model {
    Detector,
    Segmenter,
}

/// A problem with how the tool was invoked rather than with the work itself.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<Usage>() {
            return 2;
        }
        if let Some(core) = cause.downcast_ref::<radseg_core::Error>() {
            if matches!(core, radseg_core::Error::Config(_)) {
                return 2;
            }
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = RunConfig::load_with_overrides(cli.config.as_deref(), &cli.overrides).context("loading configuration")?;
    let seed = cfg.resolved_seed()?;
    let jobs = cli.jobs.max(1);
    match cli.command {
        Command::Simulate { out } => simulate(&cfg, &out, jobs),
        Command::TrainDetect { data, out, resume } => train_detect(&cfg, seed, &data, &out, resume, jobs),
        Command::TrainSeg {
            data,
            out,
            detector,
            resume,
        } => train_seg(&cfg, seed, &data, &out, detector.as_deref(), resume, jobs),
        Command::Eval {
            data,
            out,
            detector,
            segmenter,
            split,
            sweep_dthresh,
            masks,
            oracle,
        } => {
            let mut opts = EvalOptions::from_config(&cfg, &split);
            opts.jobs = jobs;
            if sweep_dthresh {
                opts.sweep = cfg.evaluation.sweep_distances.clone();
            }
            if masks {
                opts.masks_dir = Some(out.join("masks"));
            }
            eval(&cfg, &data, &out, detector.as_deref(), segmenter.as_deref(), oracle, opts)
        }
        Command::Prune {
            data,
            out,
            checkpoint,
            model,
            fraction,
        } => {
            let fraction = fraction.unwrap_or(cfg.pruning.fraction);
            if !(0.0..1.0).contains(&fraction) {
                return Err(usage(format!("prune fraction {fraction} must lie in [0, 1)")));
            }
            prune(&cfg, seed, &data, &out, &checkpoint, model, fraction, jobs)
        }
        Command::Report { path } => report(&path),
    }
}

/// Fails with a usage error unless `root` holds a dataset manifest.
fn open_split(root: &Path, split: &str) -> Result<DiskSplit> {
    if !root.join("manifest.json").is_file() {
        return Err(usage(format!("no dataset at {} (manifest.json missing)", root.display())));
    }
    let s = DiskSplit::open(root, split).with_context(|| format!("opening split {split} of {}", root.display()))?;
    Ok(s)
}

fn check_geometry(cfg: &RunConfig, data: &DiskSplit) -> Result<()> {
    if data.geometry() != &cfg.geometry {
        return Err(usage("dataset geometry differs from the configured geometry"));
    }
    Ok(())
}

fn start_run_dir(out: &Path, cfg: &RunConfig) -> Result<()> {
    create_dir_all(out)?;
    write_json_atomic(&out.join("config.json"), cfg)?;
    Ok(())
}

fn simulate(cfg: &RunConfig, out: &Path, jobs: usize) -> Result<()> {
    if out.join("manifest.json").exists() {
        log::warn!("overwriting the dataset in {}", out.display());
    }
    let (manifest, summary) = simulate_dataset(out, cfg, jobs)?;
    write_json_atomic(&out.join("config.json"), cfg)?;
    println!("wrote {} frames to {}", summary.frames, out.display());
    for (split, ids) in &manifest.splits {
        println!("  {split:<5} {:>6} frames", ids.len());
    }
    for (class, n) in &summary.class_counts {
        println!("  {class:<10} {n:>6} objects");
    }
    let s = &summary.scatterer_snr;
    println!(
        "  scatterer SNR dB: min {:.1} mean {:.1} max {:.1}",
        s.min_db, s.mean_db, s.max_db
    );
    Ok(())
}

fn train_detect(cfg: &RunConfig, seed: u64, data: &Path, out: &Path, resume: bool, jobs: usize) -> Result<()> {
    let train = open_split(data, "train")?;
    let val = open_split(data, "val")?;
    check_geometry(cfg, &train)?;
    if resume && !out.join("last.ckpt").exists() {
        return Err(usage(format!("nothing to resume in {}", out.display())));
    }
    let train_frames = detector_frames(&train, jobs)?;
    let val_frames = detector_frames(&val, jobs)?;
    start_run_dir(out, cfg)?;
    let net = DetectorNet::new(&cfg.detector.arch(&cfg.geometry), derive_seed(seed, STREAM_DETECTOR_INIT))?;
    let tcfg = DetTrainConfig {
        seed: derive_seed(seed, STREAM_DETECTOR_SHUFFLE) ^ cfg.detector.train.seed,
        decode: cfg.detector.decode,
        ..cfg.detector.train.clone()
    };
    let files = RunFiles {
        dir: Some(out.to_path_buf()),
        resume,
    };
    let outcome = train_detector(net, &train_frames, &val_frames, &tcfg, &files)?;
    let metrics = evaluate_detector(&outcome.net, &val_frames, &cfg.detector.decode)?;
    write_json_atomic(&out.join("val_metrics.json"), &metrics)?;
    println!(
        "best epoch {:?}, val mAP {}; checkpoint {}",
        outcome.best_epoch,
        fmt_opt(metrics.map),
        out.join("best.ckpt").display()
    );
    Ok(())
}

fn load_segmenter(path: &Path) -> Result<SegNet> {
    let ck = Checkpoint::load(path).with_context(|| format!("loading segmenter {}", path.display()))?;
    SegNet::from_checkpoint(&ck).map_err(|e| usage(format!("{} is not a segmenter checkpoint: {e}", path.display())))
}

fn load_det(path: &Path, cfg: &RunConfig) -> Result<DetectorNet> {
    let ck = Checkpoint::load(path).with_context(|| format!("loading detector {}", path.display()))?;
    if let Err(e) = DetectorNet::from_checkpoint(&ck) {
        return Err(usage(format!("{} is not a detector checkpoint: {e}", path.display())));
    }
    load_detector(path, &cfg.geometry).with_context(|| format!("loading detector {}", path.display()))
}

#[allow(clippy::too_many_arguments)]
fn train_seg(
    cfg: &RunConfig,
    seed: u64,
    data: &Path,
    out: &Path,
    detector: Option<&Path>,
    resume: bool,
    jobs: usize,
) -> Result<()> {
    let train = open_split(data, "train")?;
    let val = open_split(data, "val")?;
    check_geometry(cfg, &train)?;
    let det = match (cfg.segmenter.training_seeds, detector) {
        (SeedSource::Detector, None) => {
            return Err(usage("segmenter.training_seeds is \"detector\" but no --detector was given"))
        }
        (_, Some(p)) => Some(load_det(p, cfg)?),
        (SeedSource::GroundTruth, None) => None,
    };
    if resume && !out.join("last.ckpt").exists() {
        return Err(usage(format!("nothing to resume in {}", out.display())));
    }
    let source = cfg.segmenter.training_seeds;
    let decode = cfg.detector.decode;
    let train_samples = seg_samples(&train, source, det.as_ref(), &cfg.region_growing, &decode, jobs)?;
    let val_samples = seg_samples(&val, source, det.as_ref(), &cfg.region_growing, &decode, jobs)?;
    start_run_dir(out, cfg)?;
    let net = SegNet::new(&cfg.segmenter.arch, derive_seed(seed, STREAM_SEGMENTER_INIT))?;
    let tcfg = SegTrainConfig {
        seed: derive_seed(seed, STREAM_SEGMENTER_SHUFFLE) ^ cfg.segmenter.train.seed,
        ..cfg.segmenter.train.clone()
    };
    let files = RunFiles {
        dir: Some(out.to_path_buf()),
        resume,
    };
    let outcome = train_segmenter(net, &train_samples, &val_samples, &cfg.geometry, &tcfg, &files)?;
    let (ra, rd) = evaluate_segmenter(&outcome.net, &val_samples, &cfg.geometry)?;
    write_json_atomic(&out.join("val_metrics.json"), &serde_json::json!({"ra": ra, "rd": rd}))?;
    println!(
        "best epoch {:?}, val mIoU RA {} RD {}; checkpoint {}",
        outcome.best_epoch,
        fmt_opt(ra.miou),
        fmt_opt(rd.miou),
        out.join("best.ckpt").display()
    );
    Ok(())
}

fn eval(
    cfg: &RunConfig,
    data: &Path,
    out: &Path,
    detector: Option<&Path>,
    segmenter: Option<&Path>,
    oracle: bool,
    opts: EvalOptions,
) -> Result<()> {
    let split = open_split(data, &opts.split)?;
    check_geometry(cfg, &split)?;
    let det = detector.map(|p| load_det(p, cfg)).transpose()?;
    let seg = segmenter.map(load_segmenter).transpose()?;
    let predictor = match (&det, oracle) {
        (_, true) => Predictor::Oracle,
        (Some(d), false) => Predictor::Models {
            detector: d,
            segmenter: seg.as_ref(),
        },
        (None, false) => return Err(usage("eval needs --detector or --oracle")),
    };
    start_run_dir(out, cfg)?;
    let report = evaluate_split(&split, predictor, &opts)?;
    let path = out.join("metrics.json");
    report.save(&path)?;
    print_metrics(&report);
    println!("report written to {}", path.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn prune(
    cfg: &RunConfig,
    seed: u64,
    data: &Path,
    out: &Path,
    checkpoint: &Path,
    model: Model,
    fraction: f64,
    jobs: usize,
) -> Result<()> {
    let train = open_split(data, "train")?;
    let val = open_split(data, "val")?;
    check_geometry(cfg, &train)?;
    let files = RunFiles::in_dir(out);
    let report = match model {
        Model::Detector => {
            let net = load_det(checkpoint, cfg)?;
            let train_frames = detector_frames(&train, jobs)?;
            let val_frames = detector_frames(&val, jobs)?;
            start_run_dir(out, cfg)?;
            let (_, report) = prune_detector(
                &net,
                fraction,
                &train_frames,
                &val_frames,
                &detector_fine_tune_config(cfg, seed),
                &files,
            )?;
            report
        }
        Model::Segmenter => {
            let net = load_segmenter(checkpoint)?;
            let decode = cfg.detector.decode;
            let grow = &cfg.region_growing;
            let train_samples = seg_samples(&train, SeedSource::GroundTruth, None, grow, &decode, jobs)?;
            let val_samples = seg_samples(&val, SeedSource::GroundTruth, None, grow, &decode, jobs)?;
            start_run_dir(out, cfg)?;
            let (_, report) = prune_segmenter(
                &net,
                fraction,
                &train_samples,
                &val_samples,
                &cfg.geometry,
                &segmenter_fine_tune_config(cfg, seed),
                &files,
            )?;
            report
        }
    };
    let path = out.join("prune_report.json");
    write_json_atomic(&path, &report)?;
    print_prune(&report);
    println!("pruned checkpoint {}, report {}", out.join("best.ckpt").display(), path.display());
    Ok(())
}

fn report(path: &Path) -> Result<()> {
    if !path.is_file() {
        return Err(usage(format!("{} does not exist", path.display())));
    }
    if let Ok(m) = read_json::<MetricsReport>(path) {
        m.validate()?;
        print_metrics(&m);
        return Ok(());
    }
    if let Ok(p) = read_json::<PruneReport>(path) {
        print_prune(&p);
        return Ok(());
    }
    bail!("{} is neither a metrics report nor a prune report", path.display())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3}"))
}

fn print_iou(name: &str, r: &IouReport) {
    let cells: Vec<String> = r.per_class.iter().map(|(c, v)| format!("{c} {}", fmt_opt(*v))).collect();
    println!("  {name:<3} mIoU {}  ({})", fmt_opt(r.miou), cells.join(", "));
}

fn print_metrics(m: &MetricsReport) {
    println!("split {} ({} frames)", m.split, m.runtime.frames);
    if let Some(d) = &m.detection {
        let aps: Vec<String> = d.ap.iter().map(|(k, v)| format!("Dist-{k} {}", fmt_opt(*v))).collect();
        println!("detection: mAP {}  {}", fmt_opt(d.map), aps.join("  "));
        println!("  {} ground-truth objects, {} predictions", d.gt_count, d.prediction_count);
    }
    if let Some(s) = &m.segmentation {
        println!("segmentation (view consistency {:.3}):", s.view_consistency);
        print_iou("RA", &s.ra);
        print_iou("RD", &s.rd);
    }
    if let Some(b) = &m.baseline {
        println!("seed-fill baseline:");
        print_iou("RA", &b.ra);
        print_iou("RD", &b.rd);
    }
    if !m.roi.is_empty() {
        println!("region growing:");
        for r in &m.roi {
            println!(
                "  {:<12} distance {:>2}  recall {:.3}  points {:>8.1}  visited {:>8.1}",
                r.seeds, r.max_distance, r.recall, r.mean_points, r.mean_visited
            );
        }
    }
    let t = &m.runtime;
    println!(
        "runtime: detect {:.2}s  grow {:.2}s  segment {:.2}s",
        t.detect_seconds, t.grow_seconds, t.segment_seconds
    );
}

fn print_prune(r: &PruneReport) {
    println!(
        "pruned {:.0}% of channels: parameters {} -> {} ({:.3}x)",
        100.0 * r.fraction,
        r.params_before,
        r.params_after,
        r.param_ratio()
    );
    for l in &r.layers {
        println!("  {:<24} {:>4}/{:<4}", l.name, l.kept, l.total);
    }
    if let Some(name) = &r.metric_name {
        println!(
            "  {name}: before {}  after prune {}  after fine-tune {}",
            fmt_opt(r.metric_before),
            fmt_opt(r.metric_after_prune),
            fmt_opt(r.metric_after_fine_tune)
        );
    }
    for w in &r.warnings {
        println!("  warning: {w}");
    }
}
