//! One JSON document describing a whole experiment.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::detector::{DetTrainConfig, DetectorArch, DecodeConfig};
use crate::error::{Error, Result};
use crate::fsutil::read_json;
use crate::roi::GrowConfig;
use crate::sim::{RadarGeometry, SceneConfig};
use crate::sparse::{SegArch, SegTrainConfig};

/// Environment variable consulted when the config sets no seed.
pub const SEED_ENV: &str = "RADSEG_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct RunConfig {
    /// Global seed; falls back to `RADSEG_SEED`, then 0.
    pub seed: Option<u64>,
    pub geometry: RadarGeometry,
    pub simulation: SimulationConfig,
    pub detector: DetectorConfig,
    pub segmenter: SegmenterConfig,
    pub region_growing: GrowConfig,
    pub evaluation: EvalConfig,
    pub pruning: PruneConfig,
}


/// Frames are generated world by world; splits are contiguous runs of that
/// order measured in worlds, so a split of whole worlds never shares a world
/// with another split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub worlds: usize,
    pub frames_per_world: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub scene: SceneConfig,
    pub train_worlds: f64,
    pub val_worlds: f64,
    pub test_worlds: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            worlds: 6,
            frames_per_world: 100,
            min_objects: 1,
            max_objects: 4,
            scene: SceneConfig::default(),
            train_worlds: 4.0,
            val_worlds: 1.0,
            test_worlds: 1.0,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.worlds == 0 || self.frames_per_world == 0 {
            return Err(Error::Config("need at least one world and one frame per world".into()));
        }
        if self.min_objects == 0 || self.min_objects > self.max_objects {
            return Err(Error::Config(format!(
                "object count range {}..={} is empty or starts at 0",
                self.min_objects, self.max_objects
            )));
        }
        let parts = [self.train_worlds, self.val_worlds, self.test_worlds];
        if parts.iter().any(|w| !(*w >= 0.0)) || (parts.iter().sum::<f64>() - self.worlds as f64).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split sizes {parts:?} must be nonnegative and sum to {} worlds",
                self.worlds
            )));
        }
        if !(self.scene.snr_db.is_finite()) || self.scene.max_attempts == 0 {
            return Err(Error::Config("scene SNR must be finite and placement attempts positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    pub compressed_doppler: usize,
    pub encoder: [usize; 4],
    pub head_hidden: [usize; 3],
    pub train: DetTrainConfig,
    pub decode: DecodeConfig,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        let arch = DetectorArch::new(&RadarGeometry::default());
        Self {
            compressed_doppler: arch.compressed_doppler,
            encoder: arch.encoder,
            head_hidden: arch.head_hidden,
            train: DetTrainConfig {
                sparsity: 1e-4,
                ..Default::default()
            },
            decode: DecodeConfig::default(),
        }
    }
}

impl DetectorConfig {
    pub fn arch(&self, geometry: &RadarGeometry) -> DetectorArch {
        DetectorArch {
            geometry: geometry.clone(),
            compressed_doppler: self.compressed_doppler,
            encoder: self.encoder,
            head_hidden: self.head_hidden,
        }
    }
}

/// Where the segmenter's training regions are grown from.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedSource {
    /// Annotated object centers.
    GroundTruth,
    /// Decoded detections of the stage-one network.
    Detector,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmenterConfig {
    pub arch: SegArch,
    pub train: SegTrainConfig,
    pub training_seeds: SeedSource,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self {
            arch: SegArch::default(),
            train: SegTrainConfig {
                sparsity: 1e-4,
                ..Default::default()
            },
            training_seeds: SeedSource::GroundTruth,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Detection distance thresholds, meters and Doppler bins.
    pub distance_thresholds: Vec<f64>,
    /// Distance budgets for the region-growing sweep.
    pub sweep_distances: Vec<u32>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            distance_thresholds: crate::eval::DISTANCE_THRESHOLDS.to_vec(),
            sweep_distances: (3..=8).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PruneConfig {
    pub fraction: f64,
    pub fine_tune_epochs: usize,
    pub fine_tune_lr: f64,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self {
            fraction: 0.4,
            fine_tune_epochs: 50,
            fine_tune_lr: 1e-3,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    /// Reads `path` (or the defaults), applies `key.path=value` overrides and
    /// validates the result.
    pub fn load_with_overrides(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut doc = match path {
            Some(p) => read_json::<Value>(p)?,
            None => serde_json::to_value(Self::default()).expect("plain data"),
        };
        // start from a fully populated document so overrides can address
        // keys the file leaves at their defaults
        let base: Self = serde_json::from_value(doc.clone()).map_err(|e| Error::Config(e.to_string()))?;
        let mut full = serde_json::to_value(&base).expect("plain data");
        merge(&mut full, &mut doc);
        for o in overrides {
            apply_override(&mut full, o)?;
        }
        let cfg: Self = serde_json::from_value(full).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.simulation.validate()?;
        self.detector.arch(&self.geometry).validate()?;
        self.detector.train.validate()?;
        self.detector.decode.validate()?;
        self.segmenter.arch.validate()?;
        self.segmenter.train.validate()?;
        self.region_growing.validate()?;
        if self.evaluation.distance_thresholds.iter().any(|k| !(*k > 0.0)) {
            return Err(Error::Config("distance thresholds must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.pruning.fraction) || !(self.pruning.fine_tune_lr > 0.0) {
            return Err(Error::Config("prune fraction must lie in [0, 1) and fine-tune lr be positive".into()));
        }
        Ok(())
    }

    pub fn resolved_seed(&self) -> Result<u64> {
        if let Some(s) = self.seed {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
            Err(_) => Ok(0),
        }
    }
}

fn merge(base: &mut Value, over: &mut Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o.iter_mut() {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.take());
                    }
                }
            }
        }
        (b, o) => *b = o.take(),
    }
}

/// `a.b.c=value`; the value is parsed as JSON and otherwise taken as a string.
/// Only existing keys may be overridden.
pub fn apply_override(doc: &mut Value, arg: &str) -> Result<()> {
    let (path, raw) = arg
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {arg:?} is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut slot = doc;
    for key in path.split('.') {
        slot = match slot {
            Value::Object(m) => m
                .get_mut(key)
                .ok_or_else(|| Error::Config(format!("unknown config key {path:?}")))?,
            Value::Array(a) => {
                let i: usize = key
                    .parse()
                    .map_err(|_| Error::Config(format!("{path:?}: {key:?} is not an array index")))?;
                let n = a.len();
                a.get_mut(i)
                    .ok_or_else(|| Error::Config(format!("{path:?}: index {i} out of {n}")))?
            }
            _ => return Err(Error::Config(format!("{path:?} descends into a scalar"))),
        };
    }
    *slot = value;
    Ok(())
}
