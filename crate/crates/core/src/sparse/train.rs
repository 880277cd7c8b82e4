use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::grid::voxelize_batch;
use super::net::{class_weights, seg_loss, SegNet};
use crate::error::{Error, Result};
use crate::eval::{project_to_views, IouReport, ViewIou, ViewMasks};
use crate::fsutil::{append_jsonl, create_dir_all};
use crate::nn::{zero_grads, Checkpoint, LrSchedule, Sgd};
use crate::prune::add_sparsity_grad;
use crate::roi::{point_labels, SparsePointSet};
use crate::run::{non_finite, RunFiles};
use crate::sim::{RadarGeometry, NUM_CLASSES};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegTrainConfig {
    pub epochs: usize,
    /// Frames packed into one sparse grid per step.
    pub batch_frames: usize,
    pub schedule: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Inverse-frequency class weights computed over the training points.
    pub class_weighted: bool,
    pub sparsity: f64,
    pub seed: u64,
}

impl Default for SegTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_frames: 4,
            schedule: LrSchedule::Cosine { lr: 0.05, total: 60 },
            momentum: 0.9,
            weight_decay: 1e-4,
            class_weighted: true,
            sparsity: 0.0,
            seed: 0,
        }
    }
}

impl SegTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_frames == 0 {
            return Err(Error::Config("epochs and frames per batch must be positive".into()));
        }
        if !(self.schedule.base() > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("learning rate must be positive and momentum in [0, 1)".into()));
        }
        if !(self.weight_decay >= 0.0) || !(self.sparsity >= 0.0) {
            return Err(Error::Config("weight decay and sparsity must be nonnegative".into()));
        }
        Ok(())
    }
}

/// One frame for the segmenter: labeled ROI points and the ground-truth views.
#[derive(Clone, Debug)]
pub struct SegSample {
    pub points: SparsePointSet,
    pub gt_views: ViewMasks,
}

/// Split-level IoU of both views for predicted ROI points.
pub fn evaluate_segmenter(net: &SegNet, samples: &[SegSample], g: &RadarGeometry) -> Result<(IouReport, IouReport)> {
    let mut acc = ViewIou::default();
    for s in samples {
        let preds = net.predict(&s.points)?;
        acc.add(&project_to_views(&preds, g), &s.gt_views)?;
    }
    Ok((acc.ra.report(), acc.rd.report()))
}

/// Fraction of points whose arg-max class equals the label.
pub fn point_accuracy(net: &SegNet, samples: &[SegSample]) -> Result<f64> {
    let (mut right, mut total) = (0usize, 0usize);
    for s in samples {
        let labels = point_labels(&s.points);
        for (p, l) in net.predict(&s.points)?.iter().zip(&labels) {
            right += (p.class() == *l) as usize;
            total += 1;
        }
    }
    Ok(if total == 0 { 1.0 } else { right as f64 / total as f64 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegEpochRecord {
    pub epoch: usize,
    pub step: u64,
    #[serde(rename = "L_seg")]
    pub loss: f64,
    #[serde(rename = "L_s")]
    pub sparsity: f64,
    pub lr: f64,
    /// Mean of the RA and RD mIoU on the validation frames.
    pub val_miou: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ResumeMeta {
    next_epoch: usize,
    step: u64,
    best_miou: Option<f64>,
    best_epoch: Option<usize>,
}

pub struct SegTrainOutcome {
    pub net: SegNet,
    pub best_epoch: Option<usize>,
    pub best_miou: Option<f64>,
    pub history: Vec<SegEpochRecord>,
}

fn mean_view_miou(ra: &IouReport, rd: &IouReport) -> Option<f64> {
    Some((ra.miou? + rd.miou?) / 2.0)
}

/// SGD training over labeled ROI point sets, keeping the best validation
/// mean-view mIoU (ties keep the earlier epoch).
pub fn train_segmenter(
    mut net: SegNet,
    train: &[SegSample],
    val: &[SegSample],
    g: &RadarGeometry,
    cfg: &SegTrainConfig,
    files: &RunFiles,
) -> Result<SegTrainOutcome> {
    cfg.validate()?;
    let train: Vec<&SegSample> = train.iter().filter(|s| !s.points.is_empty()).collect();
    if train.is_empty() {
        return Err(Error::Config("no training frames with region points".into()));
    }
    if let Some(d) = &files.dir {
        create_dir_all(d)?;
    }
    let weights = cfg.class_weighted.then(|| {
        let all: Vec<u8> = train.iter().flat_map(|s| point_labels(&s.points)).collect();
        class_weights(&all, NUM_CLASSES)
    });
    let mut sgd = Sgd::new(cfg.schedule.base(), cfg.momentum, cfg.weight_decay);
    let mut meta = ResumeMeta {
        next_epoch: 0,
        step: 0,
        best_miou: None,
        best_epoch: None,
    };
    let mut best: Option<Checkpoint> = None;
    if files.resume {
        if let (Some(last), Some(opt)) = (files.last(), files.optimizer()) {
            if last.exists() {
                let ck = Checkpoint::load(&last)?;
                ck.apply_to(&mut net)?;
                meta = serde_json::from_value(ck.header.meta.clone())
                    .map_err(|e| Error::format(&last, e.to_string()))?;
                sgd.load_state(meta.step, &Checkpoint::load(&opt)?.tensors)?;
                if let Some(b) = files.best().filter(|p| p.exists()) {
                    best = Some(Checkpoint::load(&b)?);
                }
                log::info!("resuming segmenter training at epoch {}", meta.next_epoch);
            }
        }
    }
    let mut history = Vec::new();
    for epoch in meta.next_epoch..cfg.epochs {
        let started = Instant::now();
        sgd.lr = cfg.schedule.at(epoch);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)));
        let (mut loss_sum, mut sparsity_sum, mut batches) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch_frames) {
            let sets: Vec<&SparsePointSet> = chunk.iter().map(|&i| &train[i].points).collect();
            let labels: Vec<u8> = sets.iter().flat_map(|s| point_labels(s)).collect();
            let grid = voxelize_batch(&sets)?;
            let logits = net.forward(&grid, true)?;
            let (loss, grad) = seg_loss(&logits, &labels, weights.as_deref())?;
            if !loss.is_finite() {
                return Err(non_finite(&format!("segmentation loss at epoch {epoch}"), files));
            }
            zero_grads(&mut net);
            net.backward(&grad);
            if cfg.sparsity > 0.0 {
                sparsity_sum += add_sparsity_grad(&mut net, cfg.sparsity);
            }
            sgd.step(&mut net).map_err(|e| match e {
                Error::NonFinite(m) => non_finite(&m, files),
                e => e,
            })?;
            meta.step += 1;
            loss_sum += loss;
            batches += 1;
        }
        let val_miou = if val.is_empty() {
            None
        } else {
            let (ra, rd) = evaluate_segmenter(&net, val, g)?;
            mean_view_miou(&ra, &rd)
        };
        let record = SegEpochRecord {
            epoch,
            step: meta.step,
            loss: loss_sum / batches as f64,
            sparsity: sparsity_sum / batches as f64,
            lr: sgd.lr,
            val_miou,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!("epoch {epoch}: L_seg {:.4} val mIoU {:?}", record.loss, record.val_miou);
        let improved = val.is_empty() || val_miou.unwrap_or(-1.0) > meta.best_miou.unwrap_or(-1.0) || best.is_none();
        if improved {
            meta.best_miou = val_miou;
            meta.best_epoch = Some(epoch);
            let ck = net.checkpoint(serde_json::json!({"epoch": epoch, "val_miou": val_miou}));
            if let Some(p) = files.best() {
                ck.save(&p)?;
            }
            best = Some(ck);
        }
        meta.next_epoch = epoch + 1;
        if let (Some(last), Some(opt), Some(log)) = (files.last(), files.optimizer(), files.log()) {
            net.checkpoint(serde_json::to_value(&meta).expect("plain data")).save(&last)?;
            let arch = net.arch.clone();
            Checkpoint::new(&arch, serde_json::json!({"step": meta.step}), sgd.state_tensors()).save(&opt)?;
            append_jsonl(&log, &record)?;
        }
        history.push(record);
    }
    if let Some(ck) = &best {
        ck.apply_to(&mut net)?;
    }
    Ok(SegTrainOutcome {
        net,
        best_epoch: meta.best_epoch,
        best_miou: meta.best_miou,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::log_transform;
    use crate::eval::project_labels;
    use crate::roi::{grow, label_points, label_seeds, to_point_cloud, GrowConfig};
    use crate::sim::{generate_world, render_frame};
    use crate::sparse::SegArch;

    fn small_geometry() -> RadarGeometry {
        RadarGeometry {
            range_bins: 32,
            angle_bins: 32,
            doppler_bins: 16,
            ..Default::default()
        }
    }

    fn samples(g: &RadarGeometry, seeds: std::ops::Range<u64>) -> Vec<SegSample> {
        seeds
            .map(|s| {
                let scene = generate_world(s, 1 + (s % 2) as usize, g).unwrap();
                let (cube, labels) = render_frame(&scene, g, s + 50);
                let log = log_transform(&cube);
                let set = grow(&log, &label_seeds(&labels, g), &GrowConfig::default()).unwrap();
                let set = label_points(to_point_cloud(set, g, log.max()), &labels, g);
                SegSample {
                    points: set,
                    gt_views: project_labels(&labels, g),
                }
            })
            .collect()
    }

    #[test]
    fn loss_decreases_on_fixed_batch() {
        let g = small_geometry();
        let data = samples(&g, 0..3);
        let sets: Vec<&SparsePointSet> = data.iter().map(|s| &s.points).collect();
        let labels: Vec<u8> = sets.iter().flat_map(|s| point_labels(s)).collect();
        let grid = voxelize_batch(&sets).unwrap();
        let mut net = SegNet::new(&SegArch::default(), 1).unwrap();
        let mut sgd = Sgd::new(0.05, 0.9, 1e-4);
        let mut losses = Vec::new();
        for _ in 0..20 {
            let logits = net.forward(&grid, true).unwrap();
            let (l, gr) = seg_loss(&logits, &labels, None).unwrap();
            losses.push(l);
            zero_grads(&mut net);
            net.backward(&gr);
            sgd.step(&mut net).unwrap();
        }
        assert!(losses[19] < 0.5 * losses[0], "{losses:?}");
    }

    #[test]
    fn memorizes_three_frames() {
        let g = small_geometry();
        let data = samples(&g, 10..13);
        let cfg = SegTrainConfig {
            epochs: 150,
            batch_frames: 3,
            schedule: LrSchedule::Constant { lr: 0.05 },
            class_weighted: false,
            seed: 3,
            ..Default::default()
        };
        let out = train_segmenter(SegNet::new(&SegArch::default(), 4).unwrap(), &data, &[], &g, &cfg, &RunFiles::default()).unwrap();
        let acc = point_accuracy(&out.net, &data).unwrap();
        assert!(acc >= 0.99, "accuracy {acc}");
    }

    #[test]
    fn seeded_training_is_deterministic_and_resumable() {
        let g = small_geometry();
        let data = samples(&g, 20..24);
        let cfg = SegTrainConfig {
            epochs: 2,
            batch_frames: 2,
            seed: 5,
            ..Default::default()
        };
        let run = |files: &RunFiles, cfg: &SegTrainConfig| {
            train_segmenter(SegNet::new(&SegArch::default(), 6).unwrap(), &data, &data[..2], &g, cfg, files).unwrap()
        };
        let a = run(&RunFiles::default(), &cfg);
        let b = run(&RunFiles::default(), &cfg);
        let losses = |o: &SegTrainOutcome| o.history.iter().map(|r| (r.loss, r.val_miou, r.step)).collect::<Vec<_>>();
        assert_eq!(losses(&a), losses(&b));

        let dir = tempfile::tempdir().unwrap();
        let files = RunFiles::in_dir(dir.path());
        run(&files, &SegTrainConfig { epochs: 1, ..cfg.clone() });
        let c = run(&RunFiles { resume: true, ..files }, &cfg);
        assert_eq!(losses(&c), losses(&a)[1..].to_vec());
        assert!(dir.path().join("best.ckpt").exists());
    }
}
