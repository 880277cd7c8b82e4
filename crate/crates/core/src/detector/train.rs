use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::decode::{decode_peaks, Detection, HeadMaps, DEFAULT_MAX_DETECTIONS, DEFAULT_PEAK_THRESHOLD};
use super::input::{batch_channels, log_transform};
use super::loss::{total_detection_loss, DetLoss, LossWeights};
use super::net::{DetectorNet, OUTPUT_STRIDE};
use super::targets::{build_targets, DetectionTargets};
use crate::error::{Error, Result};
use crate::eval::{DetectionEvaluator, DetectionMetrics};
use crate::fsutil::{append_jsonl, create_dir_all};
use crate::run::{non_finite, RunFiles};
use crate::nn::{zero_grads, Adam, Checkpoint, LrSchedule};
use crate::prune::add_sparsity_grad;
use crate::sim::{ComplexRadCube, FrameLabels};

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeConfig {
    pub peak_threshold: f64,
    pub max_detections: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            peak_threshold: DEFAULT_PEAK_THRESHOLD,
            max_detections: DEFAULT_MAX_DETECTIONS,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.peak_threshold > 0.0 && self.peak_threshold < 1.0) || self.max_detections == 0 {
            return Err(Error::Config(format!(
                "peak threshold must lie in (0, 1) and max detections be positive, got {} / {}",
                self.peak_threshold, self.max_detections
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub loss_weights: LossWeights,
    /// L1 weight on prunable batch-norm scales; 0 disables.
    pub sparsity: f64,
    pub seed: u64,
    pub decode: DecodeConfig,
}

impl Default for DetTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 4,
            schedule: LrSchedule::Step {
                lr: 1e-3,
                factor: 0.1,
                every: 20,
            },
            loss_weights: LossWeights::default(),
            sparsity: 0.0,
            seed: 0,
            decode: DecodeConfig::default(),
        }
    }
}

impl DetTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if !(self.schedule.base() > 0.0) || !(self.sparsity >= 0.0) {
            return Err(Error::Config("learning rate must be positive and sparsity nonnegative".into()));
        }
        self.decode.validate()
    }
}

/// A frame ready for the detector: Doppler-as-channel log map, targets and the
/// labels used for evaluation.
#[derive(Clone, Debug)]
pub struct PreparedFrame {
    pub channels: Vec<f64>,
    pub targets: DetectionTargets,
    pub labels: FrameLabels,
}

pub fn prepare_frame(cube: &ComplexRadCube, labels: FrameLabels) -> Result<PreparedFrame> {
    let g = &cube.geometry;
    Ok(PreparedFrame {
        channels: log_transform(cube).to_channels(),
        targets: build_targets(&labels, g, OUTPUT_STRIDE)?,
        labels,
    })
}

/// Frames per inference batch.
const INFER_BATCH: usize = 8;

/// Decoded detections per frame, frames in input order.
pub fn detect(net: &DetectorNet, frames: &[&[f64]], decode: &DecodeConfig) -> Result<Vec<Vec<Detection>>> {
    let g = net.geometry().clone();
    let mut out = Vec::with_capacity(frames.len());
    for chunk in frames.chunks(INFER_BATCH) {
        let x = batch_channels(chunk, &g)?;
        let y = net.infer(&x)?;
        let (_, _, h, w) = y.heat.dims4();
        let hw = h * w;
        for b in 0..chunk.len() {
            let maps = HeadMaps {
                height: h,
                width: w,
                heat: &y.heat.data()[b * hw..(b + 1) * hw],
                offset: &y.offset.data()[2 * b * hw..2 * (b + 1) * hw],
                doppler: &y.doppler.data()[b * hw..(b + 1) * hw],
            };
            out.push(decode_peaks(maps, decode.peak_threshold, decode.max_detections, OUTPUT_STRIDE, &g));
        }
    }
    Ok(out)
}

pub fn evaluate_detector(net: &DetectorNet, frames: &[PreparedFrame], decode: &DecodeConfig) -> Result<DetectionMetrics> {
    let inputs: Vec<&[f64]> = frames.iter().map(|f| f.channels.as_slice()).collect();
    let dets = detect(net, &inputs, decode)?;
    let mut ev = DetectionEvaluator::default();
    for (d, f) in dets.iter().zip(frames) {
        ev.add_frame(d, &f.labels.objects);
    }
    Ok(ev.finish())
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetEpochRecord {
    pub epoch: usize,
    pub step: u64,
    #[serde(rename = "L_h")]
    pub heat: f64,
    #[serde(rename = "L_o")]
    pub offset: f64,
    #[serde(rename = "L_D")]
    pub doppler: f64,
    #[serde(rename = "L_det")]
    pub total: f64,
    #[serde(rename = "L_s")]
    pub sparsity: f64,
    pub lr: f64,
    #[serde(rename = "val_mAP")]
    pub val_map: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ResumeMeta {
    next_epoch: usize,
    step: u64,
    best_map: Option<f64>,
    best_epoch: Option<usize>,
}

pub struct DetTrainOutcome {
    /// Network restored to its best validation epoch.
    pub net: DetectorNet,
    pub best_epoch: Option<usize>,
    pub best_map: Option<f64>,
    pub history: Vec<DetEpochRecord>,
}

/// Mini-batch Adam training. The best-validation-mAP weights are kept (ties
/// keep the earlier epoch); without validation frames the final epoch wins.
pub fn train_detector(
    mut net: DetectorNet,
    train: &[PreparedFrame],
    val: &[PreparedFrame],
    cfg: &DetTrainConfig,
    files: &RunFiles,
) -> Result<DetTrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Config("no training frames".into()));
    }
    if let Some(d) = &files.dir {
        create_dir_all(d)?;
    }
    let mut adam = Adam::new(cfg.schedule.base());
    let mut meta = ResumeMeta {
        next_epoch: 0,
        step: 0,
        best_map: None,
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
                let ock = Checkpoint::load(&opt)?;
                adam.load_state(meta.step, &ock.tensors)?;
                if let Some(b) = files.best().filter(|p| p.exists()) {
                    best = Some(Checkpoint::load(&b)?);
                }
                log::info!("resuming detector training at epoch {}", meta.next_epoch);
            }
        }
    }
    let mut history = Vec::new();
    for epoch in meta.next_epoch..cfg.epochs {
        let started = Instant::now();
        adam.lr = cfg.schedule.at(epoch);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)));
        let mut sum = DetLoss::default();
        let mut sparsity_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let inputs: Vec<&[f64]> = chunk.iter().map(|&i| train[i].channels.as_slice()).collect();
            let targets: Vec<&DetectionTargets> = chunk.iter().map(|&i| &train[i].targets).collect();
            let x = batch_channels(&inputs, net.geometry())?;
            let out = net.forward(&x, true)?;
            let (loss, grads) = total_detection_loss(
                out.heat.data(),
                out.offset.data(),
                out.doppler.data(),
                &targets,
                cfg.loss_weights,
            );
            if !loss.total.is_finite() {
                return Err(non_finite(&format!("detection loss at epoch {epoch}"), files));
            }
            zero_grads(&mut net);
            net.backward(&out, &grads)?;
            if cfg.sparsity > 0.0 {
                sparsity_sum += add_sparsity_grad(&mut net, cfg.sparsity);
            }
            adam.step(&mut net).map_err(|e| match e {
                Error::NonFinite(m) => non_finite(&m, files),
                e => e,
            })?;
            meta.step += 1;
            sum.heat += loss.heat;
            sum.offset += loss.offset;
            sum.doppler += loss.doppler;
            sum.total += loss.total;
            batches += 1;
        }
        let val_map = if val.is_empty() {
            None
        } else {
            evaluate_detector(&net, val, &cfg.decode)?.map
        };
        let nb = batches as f64;
        let record = DetEpochRecord {
            epoch,
            step: meta.step,
            heat: sum.heat / nb,
            offset: sum.offset / nb,
            doppler: sum.doppler / nb,
            total: sum.total / nb,
            sparsity: sparsity_sum / nb,
            lr: adam.lr,
            val_map,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: L_det {:.4} (h {:.4} o {:.4} D {:.4}) val mAP {:?}",
            record.total,
            record.heat,
            record.offset,
            record.doppler,
            record.val_map
        );
        let improved = val.is_empty() || val_map.unwrap_or(-1.0) > meta.best_map.unwrap_or(-1.0) || best.is_none();
        if improved {
            meta.best_map = val_map;
            meta.best_epoch = Some(epoch);
            let ck = net.checkpoint(serde_json::json!({"epoch": epoch, "val_map": val_map}));
            if let Some(p) = files.best() {
                ck.save(&p)?;
            }
            best = Some(ck);
        }
        meta.next_epoch = epoch + 1;
        if let (Some(last), Some(opt), Some(log)) = (files.last(), files.optimizer(), files.log()) {
            net.checkpoint(serde_json::to_value(&meta).expect("plain data")).save(&last)?;
            let arch = net.arch.clone();
            Checkpoint::new(&arch, serde_json::json!({"step": meta.step}), adam.state_tensors()).save(&opt)?;
            append_jsonl(&log, &record)?;
        }
        history.push(record);
    }
    if let Some(ck) = &best {
        ck.apply_to(&mut net)?;
    }
    Ok(DetTrainOutcome {
        net,
        best_epoch: meta.best_epoch,
        best_map: meta.best_map,
        history,
    })
}

/// Loads a detector checkpoint and checks it against an expected geometry.
pub fn load_detector(path: &Path, geometry: &crate::sim::RadarGeometry) -> Result<DetectorNet> {
    let net = DetectorNet::from_checkpoint(&Checkpoint::load(path)?)?;
    if net.geometry() != geometry {
        return Err(Error::Config(format!(
            "checkpoint {} was trained for a different geometry",
            path.display()
        )));
    }
    Ok(net)
}
