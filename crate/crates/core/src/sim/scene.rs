use std::collections::HashSet;
use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::annotate::{annotate_object, ObjectLabel};
use super::geometry::{Cell, RadarGeometry};
use crate::error::{Error, Result};

/// Number of segmentation classes including background (id 0).
pub const NUM_CLASSES: usize = 5;
pub const BACKGROUND: u8 = 0;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectClass {
    Person,
    Motorcycle,
    Car,
    Truck,
}

/// Spread of an object's scatterers around its center, in bins.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Extent {
    pub range: u32,
    pub angle: u32,
    pub doppler: u32,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 4] = [
        ObjectClass::Person,
        ObjectClass::Motorcycle,
        ObjectClass::Car,
        ObjectClass::Truck,
    ];

    /// Segmentation class id; 0 is background.
    pub fn id(self) -> u8 {
        match self {
            ObjectClass::Person => 1,
            ObjectClass::Motorcycle => 2,
            ObjectClass::Car => 3,
            ObjectClass::Truck => 4,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.get((id as usize).wrapping_sub(1)).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ObjectClass::Person => "person",
            ObjectClass::Motorcycle => "motorcycle",
            ObjectClass::Car => "car",
            ObjectClass::Truck => "truck",
        }
    }

    pub fn extent(self) -> Extent {
        let (range, angle, doppler) = match self {
            ObjectClass::Person => (1, 1, 1),
            ObjectClass::Motorcycle => (1, 2, 1),
            ObjectClass::Car => (2, 3, 1),
            ObjectClass::Truck => (3, 4, 2),
        };
        Extent {
            range,
            angle,
            doppler,
        }
    }

    /// Inclusive scatterer count range.
    pub fn scatterer_count(self) -> (usize, usize) {
        match self {
            ObjectClass::Person => (1, 2),
            ObjectClass::Motorcycle => (2, 3),
            ObjectClass::Car => (3, 4),
            ObjectClass::Truck => (4, 5),
        }
    }

    /// Peak-power window above the configured minimum SNR, in dB. The four
    /// windows tile one decade.
    pub fn power_window_db(self) -> (f64, f64) {
        match self {
            ObjectClass::Person => (0.0, 4.0),
            ObjectClass::Motorcycle => (2.0, 6.0),
            ObjectClass::Car => (4.0, 8.0),
            ObjectClass::Truck => (6.0, 10.0),
        }
    }
}

pub fn class_name(id: u8) -> &'static str {
    ObjectClass::from_id(id).map_or("background", ObjectClass::name)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scatterer {
    pub cell: Cell,
    pub amplitude: Complex64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub class: ObjectClass,
    /// Cartesian position of the anchor cell, meters.
    pub position: [f64; 2],
    /// m/s, positive away from the radar
    pub radial_velocity: f64,
    pub extent: Extent,
    pub scatterers: Vec<Scatterer>,
}

/// Scene generation knobs that are not part of the radar geometry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    /// Minimum scatterer peak SNR over the noise floor, dB.
    pub snr_db: f64,
    /// Smallest Chebyshev distance between two objects' range-angle centers,
    /// in bins. Eight bins keeps centers two output cells apart at stride 4.
    pub min_center_separation: f64,
    /// Smallest Chebyshev gap between annotated cells of different objects.
    pub min_cell_gap: u32,
    /// Closest range bin an object may occupy.
    pub min_range_bin: u32,
    pub max_attempts: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            snr_db: 10.0,
            min_center_separation: 8.0,
            min_cell_gap: 3,
            min_range_bin: 4,
            max_attempts: 2000,
        }
    }
}

/// Generates `n_objects` with balanced classes using [`SceneConfig::default`].
pub fn generate_world(seed: u64, n_objects: usize, geometry: &RadarGeometry) -> Result<Vec<SceneObject>> {
    generate_world_with(seed, n_objects, geometry, &SceneConfig::default())
}

/// Places objects by rejection sampling so that annotated cell sets are
/// disjoint and separated. Classes are assigned round-robin starting at
/// `seed mod 4`.
pub fn generate_world_with(
    seed: u64,
    n_objects: usize,
    geometry: &RadarGeometry,
    cfg: &SceneConfig,
) -> Result<Vec<SceneObject>> {
    geometry.validate()?;
    if n_objects == 0 {
        return Err(Error::Contract("a world needs at least one object".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut objects: Vec<SceneObject> = Vec::with_capacity(n_objects);
    let mut labels: Vec<ObjectLabel> = Vec::with_capacity(n_objects);
    let mut occupied: HashSet<Cell> = HashSet::new();
    let mut attempts = 0;
    for i in 0..n_objects {
        let class = ObjectClass::ALL[((seed % 4) as usize + i) % 4];
        loop {
            attempts += 1;
            if attempts > cfg.max_attempts {
                return Err(Error::Placement { seed, attempts: cfg.max_attempts });
            }
            let Some(obj) = sample_object(&mut rng, class, geometry, cfg) else {
                continue;
            };
            let label = annotate_object(&obj, geometry);
            let far_enough = labels.iter().all(|l| {
                let dr = (l.center_bins[0] - label.center_bins[0]).abs();
                let da = (l.center_bins[1] - label.center_bins[1]).abs();
                dr.max(da) >= cfg.min_center_separation
            });
            if !far_enough || !separated(&label.cells, &occupied, cfg.min_cell_gap, geometry) {
                continue;
            }
            occupied.extend(label.cells.iter().copied());
            objects.push(obj);
            labels.push(label);
            break;
        }
    }
    Ok(objects)
}

fn sample_object<R: Rng>(
    rng: &mut R,
    class: ObjectClass,
    g: &RadarGeometry,
    cfg: &SceneConfig,
) -> Option<SceneObject> {
    let ext = class.extent();
    // keep the dilated footprint inside the cube
    let lo_r = (ext.range + 1).max(cfg.min_range_bin);
    let hi_r = (g.range_bins as u32).checked_sub(ext.range + 2)?;
    let lo_a = ext.angle + 1;
    let hi_a = (g.angle_bins as u32).checked_sub(ext.angle + 2)?;
    let lo_d = ext.doppler + 1;
    let hi_d = (g.doppler_bins as u32).checked_sub(ext.doppler + 2)?;
    if lo_r > hi_r || lo_a > hi_a || lo_d > hi_d {
        return None;
    }
    let center = [
        rng.gen_range(lo_r..=hi_r),
        rng.gen_range(lo_a..=hi_a),
        rng.gen_range(lo_d..=hi_d),
    ];
    let (nmin, nmax) = class.scatterer_count();
    let n = rng.gen_range(nmin..=nmax);
    let mut cells = vec![center];
    let box_cells = (2 * ext.range + 1) * (2 * ext.angle + 1) * (2 * ext.doppler + 1);
    let n = n.min(box_cells as usize);
    while cells.len() < n {
        let c = [
            center[0] + rng.gen_range(0..=2 * ext.range) - ext.range,
            center[1] + rng.gen_range(0..=2 * ext.angle) - ext.angle,
            center[2] + rng.gen_range(0..=2 * ext.doppler) - ext.doppler,
        ];
        if !cells.contains(&c) {
            cells.push(c);
        }
    }
    // one phase per rigid object; powers log-uniform inside the class window
    let phase = rng.gen_range(0.0..2.0 * PI);
    let (lo_db, hi_db) = class.power_window_db();
    let scatterers = cells
        .into_iter()
        .map(|cell| {
            let db = cfg.snr_db + rng.gen_range(lo_db..=hi_db);
            let power = reference_power(g) * 10f64.powf(db / 10.0);
            Scatterer {
                cell,
                amplitude: Complex64::from_polar(power.sqrt(), phase),
            }
        })
        .collect();
    let position = g
        .bin_to_cartesian(center[0] as usize, center[1] as usize)
        .ok()?;
    Some(SceneObject {
        class,
        position: [position.0, position.1],
        radial_velocity: g.doppler_to_velocity(center[2] as f64),
        extent: ext,
        scatterers,
    })
}

/// Power that scatterer SNRs are measured against; unit power when the
/// geometry is configured noise-free.
pub fn reference_power(g: &RadarGeometry) -> f64 {
    if g.noise_floor_power > 0.0 {
        g.noise_floor_power
    } else {
        1.0
    }
}

fn separated(cells: &[Cell], occupied: &HashSet<Cell>, gap: u32, g: &RadarGeometry) -> bool {
    if occupied.is_empty() {
        return true;
    }
    let reach = gap.saturating_sub(1) as i64;
    for c in cells {
        for dr in -reach..=reach {
            for da in -reach..=reach {
                for dd in -reach..=reach {
                    let n = [c[0] as i64 + dr, c[1] as i64 + da, c[2] as i64 + dd];
                    if n.iter().any(|&v| v < 0) {
                        continue;
                    }
                    let n = [n[0] as u32, n[1] as u32, n[2] as u32];
                    if g.contains(n) && occupied.contains(&n) {
                        return false;
                    }
                }
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::annotate::annotate_rad;

    #[test]
    fn four_objects_one_per_class() {
        let g = RadarGeometry::default();
        let scene = generate_world(7, 4, &g).unwrap();
        let mut classes: Vec<_> = scene.iter().map(|o| o.class).collect();
        classes.sort();
        assert_eq!(classes, ObjectClass::ALL.to_vec());
    }

    #[test]
    fn same_seed_same_scene() {
        let g = RadarGeometry::default();
        assert_eq!(generate_world(11, 6, &g).unwrap(), generate_world(11, 6, &g).unwrap());
        assert_ne!(generate_world(11, 6, &g).unwrap(), generate_world(12, 6, &g).unwrap());
    }

    #[test]
    fn sixteen_objects_have_pairwise_disjoint_cells() {
        let g = RadarGeometry::default();
        let scene = generate_world(3, 16, &g).unwrap();
        let labels = annotate_rad(&scene, &g);
        assert_eq!(labels.objects.len(), 16);
        for i in 0..16 {
            let a: HashSet<_> = labels.objects[i].cells.iter().collect();
            for j in i + 1..16 {
                assert!(labels.objects[j].cells.iter().all(|c| !a.contains(c)), "{i} vs {j}");
            }
        }
    }

    #[test]
    fn balance_over_multiples_of_four() {
        let g = RadarGeometry::default();
        for seed in 0..5 {
            let scene = generate_world(seed, 8, &g).unwrap();
            for class in ObjectClass::ALL {
                assert_eq!(scene.iter().filter(|o| o.class == class).count(), 2);
            }
        }
    }

    #[test]
    fn extents_are_ordered_by_class() {
        let sizes: Vec<u32> = ObjectClass::ALL
            .iter()
            .map(|c| {
                let e = c.extent();
                e.range + e.angle + e.doppler
            })
            .collect();
        assert!(sizes.windows(2).all(|w| w[0] < w[1]));
        for w in ObjectClass::ALL.windows(2) {
            let (a, b) = (w[0].extent(), w[1].extent());
            assert!(a.range <= b.range && a.angle <= b.angle && a.doppler <= b.doppler);
        }
    }

    #[test]
    fn scatterers_inside_cube_and_nonempty() {
        let g = RadarGeometry::default();
        for seed in 0..20 {
            for o in generate_world(seed, 4, &g).unwrap() {
                assert!(!o.scatterers.is_empty() && o.scatterers.len() <= 5);
                assert!(o.scatterers.iter().all(|s| g.contains(s.cell)));
            }
        }
    }

    #[test]
    fn impossible_placement_names_the_seed() {
        let g = RadarGeometry {
            range_bins: 16,
            angle_bins: 16,
            doppler_bins: 8,
            ..Default::default()
        };
        let err = generate_world(99, 40, &g).unwrap_err();
        assert!(err.to_string().contains("99"), "{err}");
    }

    #[test]
    fn class_ids_round_trip() {
        for c in ObjectClass::ALL {
            assert_eq!(ObjectClass::from_id(c.id()), Some(c));
        }
        assert_eq!(ObjectClass::from_id(0), None);
        assert_eq!(ObjectClass::from_id(5), None);
    }
}
