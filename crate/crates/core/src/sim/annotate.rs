use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::geometry::{Cell, RadarGeometry};
use super::scene::{ObjectClass, SceneObject};
use crate::error::{Error, Result};

/// Dilation radius applied around every scatterer bin. A class's spatial
/// size comes from how far apart its scatterers are spread, so the ball
/// radius stays the same for all classes.
pub const ANNOTATION_RADIUS: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectLabel {
    pub class: ObjectClass,
    /// Annotated cells, sorted by flat index.
    pub cells: Vec<Cell>,
    /// Mean Cartesian position of the cells, meters.
    pub center: [f64; 2],
    /// `center` in continuous (range, angle) bin coordinates.
    pub center_bins: [f64; 2],
    /// Mean Doppler bin index of the cells.
    pub mean_doppler: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameLabels {
    pub objects: Vec<ObjectLabel>,
}

pub fn annotate_rad(scene: &[SceneObject], g: &RadarGeometry) -> FrameLabels {
    annotate_rad_with_radius(scene, g, ANNOTATION_RADIUS)
}

pub fn annotate_rad_with_radius(scene: &[SceneObject], g: &RadarGeometry, radius: u32) -> FrameLabels {
    FrameLabels {
        objects: scene.iter().map(|o| label_object(o, g, radius)).collect(),
    }
}

pub(crate) fn annotate_object(obj: &SceneObject, g: &RadarGeometry) -> ObjectLabel {
    label_object(obj, g, ANNOTATION_RADIUS)
}

fn label_object(obj: &SceneObject, g: &RadarGeometry, radius: u32) -> ObjectLabel {
    let mut set = BTreeSet::new();
    let rad = radius as i64;
    for s in &obj.scatterers {
        for dr in -rad..=rad {
            for da in -rad..=rad {
                for dd in -rad..=rad {
                    if dr.abs() + da.abs() + dd.abs() > rad {
                        continue;
                    }
                    let c = [s.cell[0] as i64 + dr, s.cell[1] as i64 + da, s.cell[2] as i64 + dd];
                    if c.iter().any(|&v| v < 0) {
                        continue;
                    }
                    let c = [c[0] as u32, c[1] as u32, c[2] as u32];
                    if g.contains(c) {
                        set.insert(g.cell_index(c));
                    }
                }
            }
        }
    }
    let cells: Vec<Cell> = set.into_iter().map(|i| g.cell_at(i)).collect();
    object_label(obj.class, cells, g)
}

/// Builds a label from a cell set, deriving the center and mean Doppler.
pub fn object_label(class: ObjectClass, cells: Vec<Cell>, g: &RadarGeometry) -> ObjectLabel {
    let (center, mean_doppler) = cell_statistics(&cells, g);
    let (rp, ap) = g.cartesian_to_fractional(center[0], center[1]);
    ObjectLabel {
        class,
        cells,
        center,
        center_bins: [rp, ap],
        mean_doppler,
    }
}

fn cell_statistics(cells: &[Cell], g: &RadarGeometry) -> ([f64; 2], f64) {
    let n = cells.len().max(1) as f64;
    let (mut sx, mut sy, mut sd) = (0.0, 0.0, 0.0);
    for c in cells {
        let (x, y) = g.fractional_to_cartesian(c[0] as f64, c[1] as f64);
        sx += x;
        sy += y;
        sd += c[2] as f64;
    }
    ([sx / n, sy / n], sd / n)
}

impl FrameLabels {
    /// Checks bounds, non-emptiness, disjointness, and that centers and mean
    /// Doppler agree with the cell sets.
    pub fn validate(&self, g: &RadarGeometry) -> Result<()> {
        let mut owner: HashMap<Cell, usize> = HashMap::new();
        for (i, o) in self.objects.iter().enumerate() {
            if o.cells.is_empty() {
                return Err(Error::Validation(format!("object {i} ({}) has no cells", o.class.name())));
            }
            for &c in &o.cells {
                if !g.contains(c) {
                    return Err(Error::Validation(format!("object {i} has cell {c:?} outside the cube")));
                }
                if let Some(j) = owner.insert(c, i) {
                    if j != i {
                        return Err(Error::Validation(format!(
                            "objects {j} and {i} overlap at cell {c:?}"
                        )));
                    }
                    return Err(Error::Validation(format!("object {i} lists cell {c:?} twice")));
                }
            }
            let (center, doppler) = cell_statistics(&o.cells, g);
            let tol = 1e-9 * (1.0 + g.max_range);
            if (center[0] - o.center[0]).abs() > tol || (center[1] - o.center[1]).abs() > tol {
                return Err(Error::Validation(format!(
                    "object {i} center {:?} differs from its cell mean {center:?}",
                    o.center
                )));
            }
            if (doppler - o.mean_doppler).abs() > 1e-9 {
                return Err(Error::Validation(format!(
                    "object {i} mean Doppler {} differs from its cell mean {doppler}",
                    o.mean_doppler
                )));
            }
            let (rp, ap) = g.cartesian_to_fractional(center[0], center[1]);
            if (rp - o.center_bins[0]).abs() > 1e-6 || (ap - o.center_bins[1]).abs() > 1e-6 {
                return Err(Error::Validation(format!("object {i} center_bins inconsistent with center")));
            }
        }
        Ok(())
    }

    /// Class id per flat cell index; 0 where no object is annotated.
    pub fn class_volume(&self, g: &RadarGeometry) -> Vec<u8> {
        let mut vol = vec![0u8; g.n_cells()];
        for o in &self.objects {
            for &c in &o.cells {
                vol[g.cell_index(c)] = o.class.id();
            }
        }
        vol
    }

    pub fn total_cells(&self) -> usize {
        self.objects.iter().map(|o| o.cells.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::scene::{Extent, Scatterer};
    use num_complex::Complex64;

    fn object(cells: &[Cell]) -> SceneObject {
        SceneObject {
            class: ObjectClass::Car,
            position: [0.0, 0.0],
            radial_velocity: 0.0,
            extent: ObjectClass::Car.extent(),
            scatterers: cells
                .iter()
                .map(|&cell| Scatterer {
                    cell,
                    amplitude: Complex64::new(1.0, 0.0),
                })
                .collect(),
        }
    }

    #[test]
    fn radius_zero_is_the_scatterer_cell() {
        let g = RadarGeometry::default();
        let l = annotate_rad_with_radius(&[object(&[[10, 20, 5]])], &g, 0);
        let o = &l.objects[0];
        assert_eq!(o.cells, vec![[10, 20, 5]]);
        let (x, y) = g.bin_to_cartesian(10, 20).unwrap();
        assert!((o.center[0] - x).abs() < 1e-12 && (o.center[1] - y).abs() < 1e-12);
        assert_eq!(o.mean_doppler, 5.0);
    }

    #[test]
    fn radius_one_interior_has_seven_cells() {
        let g = RadarGeometry::default();
        let l = annotate_rad_with_radius(&[object(&[[10, 20, 5]])], &g, 1);
        assert_eq!(l.objects[0].cells.len(), 7);
        let corner = annotate_rad_with_radius(&[object(&[[0, 0, 0]])], &g, 1);
        assert_eq!(corner.objects[0].cells.len(), 4);
    }

    #[test]
    fn symmetric_pair_center_is_midpoint() {
        let g = RadarGeometry::default();
        let l = annotate_rad_with_radius(&[object(&[[10, 20, 5], [14, 20, 5]])], &g, 0);
        let (x1, y1) = g.bin_to_cartesian(10, 20).unwrap();
        let (x2, y2) = g.bin_to_cartesian(14, 20).unwrap();
        let c = l.objects[0].center;
        assert!((c[0] - (x1 + x2) / 2.0).abs() < 1e-12);
        assert!((c[1] - (y1 + y2) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn validate_rejects_overlap_and_bad_center() {
        let g = RadarGeometry::default();
        let mut l = annotate_rad(&[object(&[[10, 20, 5]]), object(&[[11, 20, 5]])], &g);
        let err = l.validate(&g).unwrap_err().to_string();
        assert!(err.contains("overlap"), "{err}");
        l.objects.pop();
        l.validate(&g).unwrap();
        l.objects[0].center[0] += 0.1;
        assert!(l.validate(&g).is_err());
    }

    #[test]
    fn class_volume_marks_cells() {
        let g = RadarGeometry::default();
        let mut obj = object(&[[3, 3, 3]]);
        obj.extent = Extent { range: 1, angle: 1, doppler: 1 };
        let l = annotate_rad(&[obj], &g);
        let vol = l.class_volume(&g);
        assert_eq!(vol.iter().filter(|&&v| v == 3).count(), 7);
    }
}
