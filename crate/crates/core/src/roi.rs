//! Seeded region growing over the log RAD cube.

use std::collections::{HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::detector::{Detection, LogCube};
use crate::error::{Error, Result};
use crate::sim::{clip_round, Cell, FrameLabels, RadarGeometry, BACKGROUND};

/// How each seed's admission threshold is derived.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum IntensityThreshold {
    /// Fraction of the seed cell's own log intensity.
    Fraction(f64),
    /// Fixed log intensity.
    Absolute(f64),
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrowConfig {
    /// Maximum graph distance from the seed over the 6-connected lattice.
    pub max_distance: u32,
    pub threshold: IntensityThreshold,
}

impl Default for GrowConfig {
    fn default() -> Self {
        Self {
            max_distance: 6,
            threshold: IntensityThreshold::Fraction(0.5),
        }
    }
}

impl GrowConfig {
    pub fn validate(&self) -> Result<()> {
        match self.threshold {
            IntensityThreshold::Fraction(f) if !(f > 0.0 && f <= 1.0) => {
                Err(Error::Config(format!("intensity fraction {f} must lie in (0, 1]")))
            }
            IntensityThreshold::Absolute(v) if !v.is_finite() => {
                Err(Error::Config(format!("absolute intensity threshold {v} is not finite")))
            }
            _ => Ok(()),
        }
    }

    fn threshold_for(&self, seed_intensity: f64) -> f64 {
        match self.threshold {
            IntensityThreshold::Fraction(f) => f * seed_intensity,
            IntensityThreshold::Absolute(v) => v,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Seed {
    pub cell: Cell,
    pub score: f64,
}

/// Snaps each detection to its nearest RAD cell, clipping into the cube.
pub fn seed_cells(detections: &[Detection], g: &RadarGeometry) -> Vec<Seed> {
    detections
        .iter()
        .map(|d| {
            let (r, a) = g.cartesian_to_bin(d.center[0], d.center[1]);
            Seed {
                cell: [r as u32, a as u32, clip_round(d.doppler, g.doppler_bins) as u32],
                score: d.score,
            }
        })
        .collect()
}

/// Seeds at the annotated object centers, all with score 1.
pub fn label_seeds(labels: &FrameLabels, g: &RadarGeometry) -> Vec<Seed> {
    labels
        .objects
        .iter()
        .map(|o| {
            let (r, a) = g.cartesian_to_bin(o.center[0], o.center[1]);
            Seed {
                cell: [r as u32, a as u32, clip_round(o.mean_doppler, g.doppler_bins) as u32],
                score: 1.0,
            }
        })
        .collect()
}

/// One ROI cell. `features` is filled by [`to_point_cloud`] and `label` by
/// [`label_points`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoiPoint {
    pub cell: Cell,
    /// Index of the owning seed.
    pub seed: usize,
    pub distance: u32,
    /// Raw log intensity.
    pub intensity: f64,
    /// Normalized (x, y, doppler, intensity).
    pub features: [f64; 4],
    pub label: Option<u8>,
}

/// Grown cells sorted by flat cell index.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SparsePointSet {
    pub points: Vec<RoiPoint>,
    /// Distinct cells whose admission was tested.
    pub visited: usize,
}

impl SparsePointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub(crate) fn neighbours(c: Cell, g: &RadarGeometry) -> impl Iterator<Item = Cell> + '_ {
    const STEPS: [(usize, i64); 6] = [(0, -1), (0, 1), (1, -1), (1, 1), (2, -1), (2, 1)];
    STEPS.iter().filter_map(move |&(axis, step)| {
        let v = c[axis] as i64 + step;
        let n = [g.range_bins, g.angle_bins, g.doppler_bins][axis] as i64;
        (v >= 0 && v < n).then(|| {
            let mut out = c;
            out[axis] = v as u32;
            out
        })
    })
}

/// Graph distances from one seed over the cells it admits.
fn grow_one(cube: &LogCube, seed: Cell, cfg: &GrowConfig, probed: &mut HashSet<usize>) -> HashMap<usize, u32> {
    let g = &cube.geometry;
    let seed_idx = g.cell_index(seed);
    probed.insert(seed_idx);
    let threshold = cfg.threshold_for(cube.values[seed_idx]);
    let mut dist = HashMap::new();
    dist.insert(seed_idx, 0u32);
    if cube.values[seed_idx] < threshold {
        return dist;
    }
    let mut queue = VecDeque::from([(seed, 0u32)]);
    while let Some((c, d)) = queue.pop_front() {
        if d == cfg.max_distance {
            continue;
        }
        for n in neighbours(c, g) {
            let idx = g.cell_index(n);
            if dist.contains_key(&idx) {
                continue;
            }
            probed.insert(idx);
            if cube.values[idx] >= threshold {
                dist.insert(idx, d + 1);
                queue.push_back((n, d + 1));
            }
        }
    }
    dist
}

/// Breadth-first growth from every seed. A cell reached by several seeds goes
/// to the one with the smaller graph distance, then the higher score, then the
/// lower seed index.
pub fn grow(cube: &LogCube, seeds: &[Seed], cfg: &GrowConfig) -> Result<SparsePointSet> {
    cfg.validate()?;
    let g = &cube.geometry;
    let mut probed = HashSet::new();
    let mut owner: HashMap<usize, (u32, usize)> = HashMap::new();
    for (si, s) in seeds.iter().enumerate() {
        if !g.contains(s.cell) {
            return Err(Error::Contract(format!("seed {:?} outside the cube", s.cell)));
        }
        for (idx, d) in grow_one(cube, s.cell, cfg, &mut probed) {
            let better = match owner.get(&idx) {
                None => true,
                Some(&(od, os)) => (d, -seeds[si].score, si) < (od, -seeds[os].score, os),
            };
            if better {
                owner.insert(idx, (d, si));
            }
        }
    }
    let mut cells: Vec<(usize, (u32, usize))> = owner.into_iter().collect();
    cells.sort_unstable_by_key(|&(idx, _)| idx);
    Ok(SparsePointSet {
        points: cells
            .into_iter()
            .map(|(idx, (distance, seed))| RoiPoint {
                cell: g.cell_at(idx),
                seed,
                distance,
                intensity: cube.values[idx],
                features: [0.0; 4],
                label: None,
            })
            .collect(),
        visited: probed.len(),
    })
}

/// Normalized features: x and y over the maximum range, Doppler offset from
/// the zero-velocity bin over half the bin count, intensity over `intensity_max`.
pub fn to_point_cloud(mut set: SparsePointSet, g: &RadarGeometry, intensity_max: f64) -> SparsePointSet {
    let half = g.doppler_bins as f64 / 2.0;
    let scale = if intensity_max > 0.0 { intensity_max } else { 1.0 };
    for p in &mut set.points {
        let (x, y) = g.fractional_to_cartesian(p.cell[0] as f64, p.cell[1] as f64);
        p.features = [
            x / g.max_range,
            y / g.max_range,
            (p.cell[2] as f64 - half) / half,
            p.intensity / scale,
        ];
    }
    set
}

pub fn label_points(mut set: SparsePointSet, labels: &FrameLabels, g: &RadarGeometry) -> SparsePointSet {
    let vol = labels.class_volume(g);
    for p in &mut set.points {
        p.label = Some(vol[g.cell_index(p.cell)]);
    }
    set
}

/// Annotated cells covered by the set, and the annotated total.
pub fn roi_coverage(set: &SparsePointSet, labels: &FrameLabels, g: &RadarGeometry) -> (usize, usize) {
    let grown: HashSet<usize> = set.points.iter().map(|p| g.cell_index(p.cell)).collect();
    let mut covered = 0;
    let mut total = 0;
    for o in &labels.objects {
        for &c in &o.cells {
            total += 1;
            covered += grown.contains(&g.cell_index(c)) as usize;
        }
    }
    (covered, total)
}

pub fn roi_recall(set: &SparsePointSet, labels: &FrameLabels, g: &RadarGeometry) -> f64 {
    match roi_coverage(set, labels, g) {
        (_, 0) => 1.0,
        (c, t) => c as f64 / t as f64,
    }
}

/// Class per point, background when unlabeled.
pub fn point_labels(set: &SparsePointSet) -> Vec<u8> {
    set.points.iter().map(|p| p.label.unwrap_or(BACKGROUND)).collect()
}
