//! End-to-end orchestration: dataset generation, stage inputs, the full
//! detect, grow, segment evaluation and prune-then-fine-tune.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, SeedSource, SimulationConfig};
use crate::dataset::{save_frame, DatasetManifest, FrameSeeds};
use crate::detector::{
    detect, evaluate_detector, log_transform, prepare_frame, train_detector, DecodeConfig, DetTrainConfig,
    Detection, DetectorNet, PreparedFrame,
};
use crate::error::{Error, Result};
use crate::eval::{
    project_labels, project_to_views, view_consistency, write_ppm, CellPrediction, DetectionEvaluator, MetricsReport,
    RoiStats, RuntimeCounters, SegmentationMetrics, ViewIou, ViewMasks,
};
use crate::nn::LrSchedule;
use crate::prune::{prune, PruneReport};
use crate::roi::{grow, label_points, label_seeds, roi_coverage, seed_cells, to_point_cloud, GrowConfig, IntensityThreshold, SparsePointSet};
use crate::run::RunFiles;
use crate::sim::{
    class_name, generate_world_with, reference_power, render_frame, ComplexRadCube, FrameLabels, RadarGeometry,
    BACKGROUND, NUM_CLASSES,
};
use crate::sparse::{evaluate_segmenter, train_segmenter, SegNet, SegSample, SegTrainConfig};

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent seed for a named stream of the global seed.
pub fn derive_seed(global: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(global) ^ stream)
}

pub const STREAM_DETECTOR_INIT: u64 = 1;
pub const STREAM_DETECTOR_SHUFFLE: u64 = 2;
pub const STREAM_SEGMENTER_INIT: u64 = 3;
pub const STREAM_SEGMENTER_SHUFFLE: u64 = 4;

/// Maps `f` over `0..n` on up to `jobs` threads; results come back in index
/// order and the first error by index wins, so output never depends on `jobs`.
pub fn par_map<T, F>(jobs: usize, n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let jobs = jobs.clamp(1, n.max(1));
    if jobs == 1 {
        return (0..n).map(f).collect();
    }
    let mut slots: Vec<Option<Result<T>>> = (0..n).map(|_| None).collect();
    std::thread::scope(|s| {
        let f = &f;
        let handles: Vec<_> = (0..jobs)
            .map(|t| s.spawn(move || (t..n).step_by(jobs).map(|i| (i, f(i))).collect::<Vec<_>>()))
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots.into_iter().map(|r| r.expect("every index visited")).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlannedFrame {
    pub id: String,
    pub split: &'static str,
    pub seeds: FrameSeeds,
}

/// Every frame of a simulation run in world-major order with its split.
pub fn frame_plan(sim: &SimulationConfig, seed: u64) -> Result<Vec<PlannedFrame>> {
    sim.validate()?;
    let total = sim.worlds * sim.frames_per_world;
    let train_end = (sim.train_worlds * sim.frames_per_world as f64).round() as usize;
    let val_end = ((sim.train_worlds + sim.val_worlds) * sim.frames_per_world as f64).round() as usize;
    let base = splitmix64(seed);
    let mut out = Vec::with_capacity(total);
    for w in 0..sim.worlds {
        let world_seed = splitmix64(base ^ (w as u64).wrapping_mul(0xd1b5_4a32_d192_ed03));
        for f in 0..sim.frames_per_world {
            let i = out.len();
            let scene = splitmix64(world_seed ^ f as u64);
            out.push(PlannedFrame {
                id: format!("w{w:02}_f{f:04}"),
                split: if i < train_end {
                    "train"
                } else if i < val_end {
                    "val"
                } else {
                    "test"
                },
                seeds: FrameSeeds {
                    world: w as u32,
                    scene,
                    noise: splitmix64(scene ^ 0x6e6f_6973_6500_0000),
                },
            });
        }
    }
    Ok(out)
}

pub fn object_count(seeds: &FrameSeeds, sim: &SimulationConfig) -> usize {
    let span = (sim.max_objects - sim.min_objects + 1) as u64;
    sim.min_objects + (splitmix64(seeds.scene ^ 0x636f_756e_7400_0000) % span) as usize
}

pub fn render_planned(seeds: &FrameSeeds, sim: &SimulationConfig, g: &RadarGeometry) -> Result<(ComplexRadCube, FrameLabels)> {
    let scene = generate_world_with(seeds.scene, object_count(seeds, sim), g, &sim.scene)?;
    Ok(render_frame(&scene, g, seeds.noise))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SnrStats {
    pub min_db: f64,
    pub mean_db: f64,
    pub max_db: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub frames: usize,
    pub split_frames: BTreeMap<String, usize>,
    pub class_counts: BTreeMap<String, usize>,
    /// Per-scatterer peak SNR over the noise floor.
    pub scatterer_snr: SnrStats,
}

/// Renders every planned frame to `root` and writes the manifest last. The
/// configuration is validated before anything touches the disk.
pub fn simulate_dataset(root: &Path, cfg: &RunConfig, jobs: usize) -> Result<(DatasetManifest, SimSummary)> {
    cfg.validate()?;
    let g = &cfg.geometry;
    let plan = frame_plan(&cfg.simulation, cfg.resolved_seed()?)?;
    let per_frame = par_map(jobs, plan.len(), |i| {
        let p = &plan[i];
        let scene = generate_world_with(p.seeds.scene, object_count(&p.seeds, &cfg.simulation), g, &cfg.simulation.scene)?;
        let (cube, labels) = render_frame(&scene, g, p.seeds.noise);
        save_frame(root, p.split, &p.id, &cube, &labels)?;
        let classes: Vec<u8> = scene.iter().map(|o| o.class.id()).collect();
        let snrs: Vec<f64> = scene
            .iter()
            .flat_map(|o| o.scatterers.iter())
            .map(|s| 10.0 * (s.amplitude.norm_sqr() / reference_power(g)).log10())
            .collect();
        Ok((classes, snrs))
    })?;
    let mut manifest = DatasetManifest::new(g);
    let mut summary = SimSummary {
        frames: plan.len(),
        ..Default::default()
    };
    let (mut snr_sum, mut snr_n, mut lo, mut hi) = (0.0, 0usize, f64::INFINITY, f64::NEG_INFINITY);
    for (p, (classes, snrs)) in plan.iter().zip(&per_frame) {
        manifest.splits.get_mut(p.split).expect("known split").push(p.id.clone());
        manifest.seeds.insert(p.id.clone(), p.seeds);
        *summary.split_frames.entry(p.split.to_string()).or_default() += 1;
        for &c in classes {
            *summary.class_counts.entry(class_name(c).to_string()).or_default() += 1;
        }
        for &s in snrs {
            snr_sum += s;
            snr_n += 1;
            lo = lo.min(s);
            hi = hi.max(s);
        }
    }
    if snr_n > 0 {
        summary.scatterer_snr = SnrStats {
            min_db: lo,
            mean_db: snr_sum / snr_n as f64,
            max_db: hi,
        };
    }
    manifest.save(root)?;
    Ok((manifest, summary))
}

/// Random access to the frames of one split.
pub trait FrameSource: Sync {
    fn len(&self) -> usize;
    fn id(&self, i: usize) -> String;
    fn load(&self, i: usize) -> Result<(ComplexRadCube, FrameLabels)>;
    fn geometry(&self) -> &RadarGeometry;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A split of a dataset on disk.
pub struct DiskSplit {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
    pub ids: Vec<String>,
}

impl DiskSplit {
    pub fn open(root: &Path, split: &str) -> Result<Self> {
        let manifest = DatasetManifest::load(root)?;
        let ids = manifest.split(split)?.to_vec();
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
            ids,
        })
    }
}

impl FrameSource for DiskSplit {
    fn len(&self) -> usize {
        self.ids.len()
    }
    fn id(&self, i: usize) -> String {
        self.ids[i].clone()
    }
    fn load(&self, i: usize) -> Result<(ComplexRadCube, FrameLabels)> {
        self.manifest.load_frame(&self.root, &self.ids[i])
    }
    fn geometry(&self) -> &RadarGeometry {
        &self.manifest.geometry
    }
}

/// A split rendered on demand from the simulation plan, never touching disk.
pub struct SimulatedSplit {
    pub frames: Vec<PlannedFrame>,
    pub simulation: SimulationConfig,
    pub geometry: RadarGeometry,
}

impl SimulatedSplit {
    pub fn new(cfg: &RunConfig, split: &str) -> Result<Self> {
        let frames = frame_plan(&cfg.simulation, cfg.resolved_seed()?)?
            .into_iter()
            .filter(|p| p.split == split)
            .collect();
        Ok(Self {
            frames,
            simulation: cfg.simulation.clone(),
            geometry: cfg.geometry.clone(),
        })
    }
}

impl FrameSource for SimulatedSplit {
    fn len(&self) -> usize {
        self.frames.len()
    }
    fn id(&self, i: usize) -> String {
        self.frames[i].id.clone()
    }
    fn load(&self, i: usize) -> Result<(ComplexRadCube, FrameLabels)> {
        render_planned(&self.frames[i].seeds, &self.simulation, &self.geometry)
    }
    fn geometry(&self) -> &RadarGeometry {
        &self.geometry
    }
}

pub fn detector_frames(src: &dyn FrameSource, jobs: usize) -> Result<Vec<PreparedFrame>> {
    par_map(jobs, src.len(), |i| {
        let (cube, labels) = src.load(i)?;
        prepare_frame(&cube, labels)
    })
}

/// Seeds for one frame: annotated centers or decoded detections.
fn frame_seeds(
    cube: &ComplexRadCube,
    labels: &FrameLabels,
    source: SeedSource,
    detector: Option<&DetectorNet>,
    decode: &DecodeConfig,
) -> Result<Vec<crate::roi::Seed>> {
    let g = &cube.geometry;
    Ok(match source {
        SeedSource::GroundTruth => label_seeds(labels, g),
        SeedSource::Detector => {
            let net = detector.ok_or_else(|| Error::Config("detector seeds requested without a detector".into()))?;
            let ch = log_transform(cube).to_channels();
            seed_cells(&detect(net, &[&ch], decode)?[0], g)
        }
    })
}

/// Labeled ROI point sets and ground-truth views for segmenter training.
pub fn seg_samples(
    src: &dyn FrameSource,
    source: SeedSource,
    detector: Option<&DetectorNet>,
    grow_cfg: &GrowConfig,
    decode: &DecodeConfig,
    jobs: usize,
) -> Result<Vec<SegSample>> {
    par_map(jobs, src.len(), |i| {
        let (cube, labels) = src.load(i)?;
        let g = &cube.geometry;
        let seeds = frame_seeds(&cube, &labels, source, detector, decode)?;
        let log = log_transform(&cube);
        let set = grow(&log, &seeds, grow_cfg)?;
        let set = label_points(to_point_cloud(set, g, log.max()), &labels, g);
        Ok(SegSample {
            points: set,
            gt_views: project_labels(&labels, g),
        })
    })
}

/// What produces predictions during evaluation.
#[derive(Clone, Copy)]
pub enum Predictor<'a> {
    Models {
        detector: &'a DetectorNet,
        segmenter: Option<&'a SegNet>,
    },
    /// Ground truth echoed back as predictions; an identity check of the
    /// evaluation path.
    Oracle,
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub split: String,
    pub decode: DecodeConfig,
    pub grow: GrowConfig,
    pub distance_thresholds: Vec<f64>,
    /// Distance budgets for a ground-truth-seeded region-growing sweep.
    pub sweep: Vec<u32>,
    pub masks_dir: Option<PathBuf>,
    pub jobs: usize,
}

impl EvalOptions {
    pub fn from_config(cfg: &RunConfig, split: &str) -> Self {
        Self {
            split: split.to_string(),
            decode: cfg.detector.decode,
            grow: cfg.region_growing,
            distance_thresholds: cfg.evaluation.distance_thresholds.clone(),
            sweep: Vec::new(),
            masks_dir: None,
            jobs: 1,
        }
    }
}

/// Every ROI point takes the class its seed's region votes for (summed
/// non-background probability); the region is filled without per-point
/// boundaries.
pub fn seed_fill_baseline(set: &SparsePointSet, preds: &[CellPrediction], n_seeds: usize) -> Vec<CellPrediction> {
    let mut votes = vec![[0.0; NUM_CLASSES]; n_seeds];
    for (p, pr) in set.points.iter().zip(preds) {
        for c in 1..NUM_CLASSES {
            votes[p.seed][c] += pr.probs[c];
        }
    }
    let class: Vec<u8> = votes
        .iter()
        .map(|v| {
            let mut best = BACKGROUND as usize;
            for c in 1..NUM_CLASSES {
                if v[c] > 0.0 && (best == BACKGROUND as usize || v[c] > v[best]) {
                    best = c;
                }
            }
            best as u8
        })
        .collect();
    set.points.iter().map(|p| CellPrediction::one_hot(p.cell, class[p.seed])).collect()
}

#[derive(Default)]
struct RoiCounts {
    covered: usize,
    total: usize,
    points: usize,
    visited: usize,
}

struct FrameOutcome {
    detections: Vec<Detection>,
    labels: FrameLabels,
    views: Option<(ViewMasks, ViewMasks, Option<ViewMasks>)>,
    roi: RoiCounts,
    sweep: Vec<RoiCounts>,
    seconds: [f64; 3],
}

fn gt_detections(labels: &FrameLabels) -> Vec<Detection> {
    labels
        .objects
        .iter()
        .map(|o| Detection {
            center: o.center,
            score: 1.0,
            doppler: o.mean_doppler,
            center_bins: o.center_bins,
        })
        .collect()
}

fn counts(set: &SparsePointSet, labels: &FrameLabels, g: &RadarGeometry) -> RoiCounts {
    let (covered, total) = roi_coverage(set, labels, g);
    RoiCounts {
        covered,
        total,
        points: set.len(),
        visited: set.visited,
    }
}

fn evaluate_frame(src: &dyn FrameSource, i: usize, predictor: Predictor<'_>, opts: &EvalOptions) -> Result<FrameOutcome> {
    let (cube, labels) = src.load(i)?;
    let g = &cube.geometry;
    let log = log_transform(&cube);
    let mut seconds = [0.0; 3];
    let sweep = opts
        .sweep
        .iter()
        .map(|&d| {
            let cfg = GrowConfig {
                max_distance: d,
                ..opts.grow
            };
            grow(&log, &label_seeds(&labels, g), &cfg).map(|s| counts(&s, &labels, g))
        })
        .collect::<Result<Vec<_>>>()?;
    let gt_views = project_labels(&labels, g);
    let (detections, views, roi) = match predictor {
        Predictor::Oracle => {
            let preds: Vec<CellPrediction> = labels
                .objects
                .iter()
                .flat_map(|o| o.cells.iter().map(move |&c| CellPrediction::one_hot(c, o.class.id())))
                .collect();
            let set = grow(&log, &label_seeds(&labels, g), &opts.grow)?;
            let roi = counts(&set, &labels, g);
            (gt_detections(&labels), Some((project_to_views(&preds, g), gt_views, None)), roi)
        }
        Predictor::Models { detector, segmenter } => {
            let t = Instant::now();
            let ch = log.to_channels();
            let dets = detect(detector, &[&ch], &opts.decode)?.remove(0);
            seconds[0] = t.elapsed().as_secs_f64();
            let t = Instant::now();
            let seeds = seed_cells(&dets, g);
            let set = to_point_cloud(grow(&log, &seeds, &opts.grow)?, g, log.max());
            seconds[1] = t.elapsed().as_secs_f64();
            let roi = counts(&set, &labels, g);
            let views = match segmenter {
                Some(net) => {
                    let t = Instant::now();
                    let preds = net.predict(&set)?;
                    seconds[2] = t.elapsed().as_secs_f64();
                    let base = project_to_views(&seed_fill_baseline(&set, &preds, seeds.len()), g);
                    Some((project_to_views(&preds, g), gt_views, Some(base)))
                }
                None => None,
            };
            (dets, views, roi)
        }
    };
    if let (Some(dir), Some((pred, gt, _))) = (&opts.masks_dir, &views) {
        let id = src.id(i);
        write_ppm(&dir.join(format!("{id}_ra.ppm")), &pred.ra, g.range_bins, g.angle_bins)?;
        write_ppm(&dir.join(format!("{id}_rd.ppm")), &pred.rd, g.range_bins, g.doppler_bins)?;
        write_ppm(&dir.join(format!("{id}_ra_gt.ppm")), &gt.ra, g.range_bins, g.angle_bins)?;
        write_ppm(&dir.join(format!("{id}_rd_gt.ppm")), &gt.rd, g.range_bins, g.doppler_bins)?;
    }
    Ok(FrameOutcome {
        detections,
        labels,
        views,
        roi,
        sweep,
        seconds,
    })
}

fn roi_stats(c: &RoiCounts, frames: usize, max_distance: u32, threshold: IntensityThreshold, seeds: SeedSource) -> RoiStats {
    let n = frames.max(1) as f64;
    RoiStats {
        max_distance,
        intensity_fraction: match threshold {
            IntensityThreshold::Fraction(f) => Some(f),
            IntensityThreshold::Absolute(_) => None,
        },
        seeds: match seeds {
            SeedSource::GroundTruth => "ground_truth".into(),
            SeedSource::Detector => "detector".into(),
        },
        recall: if c.total == 0 { 1.0 } else { c.covered as f64 / c.total as f64 },
        mean_points: c.points as f64 / n,
        mean_visited: c.visited as f64 / n,
    }
}

/// Runs the pipeline over a split and reduces per-frame results in frame
/// order.
pub fn evaluate_split(src: &dyn FrameSource, predictor: Predictor<'_>, opts: &EvalOptions) -> Result<MetricsReport> {
    if let Some(d) = &opts.masks_dir {
        crate::fsutil::create_dir_all(d)?;
    }
    let outcomes = par_map(opts.jobs, src.len(), |i| evaluate_frame(src, i, predictor, opts))?;
    let mut det = DetectionEvaluator::new(&opts.distance_thresholds);
    let mut iou = ViewIou::default();
    let mut base_iou = ViewIou::default();
    let (mut consistency, mut base_consistency, mut seg_frames, mut base_frames) = (0.0, 0.0, 0usize, 0usize);
    let mut roi = RoiCounts::default();
    let mut sweep: Vec<RoiCounts> = opts.sweep.iter().map(|_| RoiCounts::default()).collect();
    let mut runtime = RuntimeCounters {
        frames: outcomes.len(),
        ..Default::default()
    };
    let add = |acc: &mut RoiCounts, c: &RoiCounts| {
        acc.covered += c.covered;
        acc.total += c.total;
        acc.points += c.points;
        acc.visited += c.visited;
    };
    for o in &outcomes {
        det.add_frame(&o.detections, &o.labels.objects);
        if let Some((pred, gt, base)) = &o.views {
            iou.add(pred, gt)?;
            consistency += view_consistency(pred);
            seg_frames += 1;
            if let Some(b) = base {
                base_iou.add(b, gt)?;
                base_consistency += view_consistency(b);
                base_frames += 1;
            }
        }
        add(&mut roi, &o.roi);
        for (acc, c) in sweep.iter_mut().zip(&o.sweep) {
            add(acc, c);
        }
        runtime.detect_seconds += o.seconds[0];
        runtime.grow_seconds += o.seconds[1];
        runtime.segment_seconds += o.seconds[2];
    }
    let n = outcomes.len();
    let pipeline_seeds = match predictor {
        Predictor::Oracle => SeedSource::GroundTruth,
        Predictor::Models { .. } => SeedSource::Detector,
    };
    let mut roi_list = vec![roi_stats(&roi, n, opts.grow.max_distance, opts.grow.threshold, pipeline_seeds)];
    for (d, c) in opts.sweep.iter().zip(&sweep) {
        roi_list.push(roi_stats(c, n, *d, opts.grow.threshold, SeedSource::GroundTruth));
    }
    let report = MetricsReport {
        split: opts.split.clone(),
        detection: Some(det.finish()),
        segmentation: (seg_frames > 0).then(|| SegmentationMetrics {
            ra: iou.ra.report(),
            rd: iou.rd.report(),
            view_consistency: consistency / seg_frames as f64,
        }),
        baseline: (base_frames > 0).then(|| SegmentationMetrics {
            ra: base_iou.ra.report(),
            rd: base_iou.rd.report(),
            view_consistency: base_consistency / base_frames as f64,
        }),
        roi: roi_list,
        runtime,
    };
    report.validate()?;
    Ok(report)
}

/// Prunes a trained detector, fine-tunes it with Adam at a constant rate and
/// reports validation mAP before pruning, after pruning and after
/// fine-tuning. On divergence the error names the pre-fine-tune checkpoint.
pub fn prune_detector(
    net: &DetectorNet,
    fraction: f64,
    train: &[PreparedFrame],
    val: &[PreparedFrame],
    fine_tune: &DetTrainConfig,
    files: &RunFiles,
) -> Result<(DetectorNet, PruneReport)> {
    let (mut pruned, mut report) = prune(net, fraction)?;
    report.metric_name = Some("val_mAP".into());
    report.metric_before = evaluate_detector(net, val, &fine_tune.decode)?.map;
    report.metric_after_prune = evaluate_detector(&pruned, val, &fine_tune.decode)?.map;
    if let Some(d) = &files.dir {
        crate::fsutil::create_dir_all(d)?;
        pruned
            .checkpoint(serde_json::json!({"pruned_fraction": fraction, "fine_tuned": false}))
            .save(&d.join("pruned.ckpt"))?;
    }
    let tuned = if fine_tune.epochs == 0 {
        pruned
    } else {
        train_detector(pruned, train, val, fine_tune, files)
            .map_err(|e| match (e, &files.dir) {
                (Error::NonFinite(m), Some(d)) => Error::NonFinite(format!(
                    "{m}; pre-fine-tune checkpoint {}",
                    d.join("pruned.ckpt").display()
                )),
                (e, _) => e,
            })?
            .net
    };
    report.metric_after_fine_tune = evaluate_detector(&tuned, val, &fine_tune.decode)?.map;
    Ok((tuned, report))
}

/// Segmenter counterpart of [`prune_detector`], scored by mean-view mIoU.
pub fn prune_segmenter(
    net: &SegNet,
    fraction: f64,
    train: &[SegSample],
    val: &[SegSample],
    g: &RadarGeometry,
    fine_tune: &SegTrainConfig,
    files: &RunFiles,
) -> Result<(SegNet, PruneReport)> {
    let score = |n: &SegNet| -> Result<Option<f64>> {
        let (ra, rd) = evaluate_segmenter(n, val, g)?;
        Ok(ra.miou.zip(rd.miou).map(|(a, b)| (a + b) / 2.0))
    };
    let (mut pruned, mut report) = prune(net, fraction)?;
    report.metric_name = Some("val_mIoU".into());
    report.metric_before = score(net)?;
    report.metric_after_prune = score(&pruned)?;
    if let Some(d) = &files.dir {
        crate::fsutil::create_dir_all(d)?;
        pruned
            .checkpoint(serde_json::json!({"pruned_fraction": fraction, "fine_tuned": false}))
            .save(&d.join("pruned.ckpt"))?;
    }
    let tuned = if fine_tune.epochs == 0 {
        pruned
    } else {
        train_segmenter(pruned, train, val, g, fine_tune, files)?.net
    };
    report.metric_after_fine_tune = score(&tuned)?;
    Ok((tuned, report))
}

/// Fine-tuning schedule derived from the run config: constant rate, no
/// sparsity term.
pub fn detector_fine_tune_config(cfg: &RunConfig, seed: u64) -> DetTrainConfig {
    DetTrainConfig {
        epochs: cfg.pruning.fine_tune_epochs,
        schedule: LrSchedule::Constant { lr: cfg.pruning.fine_tune_lr },
        sparsity: 0.0,
        seed: derive_seed(seed, STREAM_DETECTOR_SHUFFLE) ^ 0x7475_6e65,
        decode: cfg.detector.decode,
        ..cfg.detector.train.clone()
    }
}

pub fn segmenter_fine_tune_config(cfg: &RunConfig, seed: u64) -> SegTrainConfig {
    SegTrainConfig {
        epochs: cfg.pruning.fine_tune_epochs,
        schedule: LrSchedule::Constant { lr: cfg.pruning.fine_tune_lr },
        sparsity: 0.0,
        seed: derive_seed(seed, STREAM_SEGMENTER_SHUFFLE) ^ 0x7475_6e65,
        ..cfg.segmenter.train.clone()
    }
}
