use crate::error::{Error, Result};
use crate::sim::{FrameLabels, RadarGeometry};

/// Gaussian widths of the heatmap blob along range and angle, in output cells.
pub const SIGMA_RANGE: f64 = 1.0 / 3.0;
pub const SIGMA_ANGLE: f64 = 1.0 / 2.0;

/// Training targets on the stride-`S` output grid, row-major `(range, angle)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectionTargets {
    pub height: usize,
    pub width: usize,
    pub stride: usize,
    pub heatmap: Vec<f64>,
    /// `[2, H, W]`: range then angle component
    pub offset: Vec<f64>,
    pub doppler: Vec<f64>,
    pub center_mask: Vec<bool>,
    /// Flat indices of the center cells, in object order.
    pub centers: Vec<usize>,
}

/// Stride-`S` grid cell holding a continuous bin position, and the
/// sub-cell remainder in `[0, 1)`.
pub fn low_res_center(pos: f64, stride: usize, cells: usize) -> (usize, f64) {
    let q = pos / stride as f64;
    let cell = (q.floor().max(0.0) as usize).min(cells - 1);
    (cell, (q - cell as f64).clamp(0.0, 1.0 - f64::EPSILON))
}

pub fn gaussian(di: f64, dj: f64) -> f64 {
    (-di * di / (2.0 * SIGMA_RANGE * SIGMA_RANGE) - dj * dj / (2.0 * SIGMA_ANGLE * SIGMA_ANGLE)).exp()
}

pub fn build_targets(labels: &FrameLabels, g: &RadarGeometry, stride: usize) -> Result<DetectionTargets> {
    if stride == 0 || !g.range_bins.is_multiple_of(stride) || !g.angle_bins.is_multiple_of(stride) {
        return Err(Error::Config(format!(
            "stride {stride} must divide {}x{}",
            g.range_bins, g.angle_bins
        )));
    }
    let (h, w) = (g.range_bins / stride, g.angle_bins / stride);
    let mut t = DetectionTargets {
        height: h,
        width: w,
        stride,
        heatmap: vec![0.0; h * w],
        offset: vec![0.0; 2 * h * w],
        doppler: vec![0.0; h * w],
        center_mask: vec![false; h * w],
        centers: Vec::with_capacity(labels.objects.len()),
    };
    for (k, o) in labels.objects.iter().enumerate() {
        let [pr, pa] = o.center_bins;
        let inside = |p: f64, n: usize| p.is_finite() && p >= -0.5 && p <= n as f64 - 0.5;
        if !inside(pr, g.range_bins) || !inside(pa, g.angle_bins) {
            return Err(Error::Validation(format!("object {k} center {:?} lies outside the cube", o.center_bins)));
        }
        let (ci, oi) = low_res_center(pr.max(0.0), stride, h);
        let (cj, oj) = low_res_center(pa.max(0.0), stride, w);
        let idx = ci * w + cj;
        if t.center_mask[idx] {
            return Err(Error::Validation(format!("object {k} shares output cell {ci},{cj} with another object")));
        }
        t.center_mask[idx] = true;
        t.centers.push(idx);
        t.offset[idx] = oi;
        t.offset[h * w + idx] = oj;
        t.doppler[idx] = o.mean_doppler;
        for i in 0..h {
            for j in 0..w {
                let v = gaussian(i as f64 - ci as f64, j as f64 - cj as f64);
                let cell = &mut t.heatmap[i * w + j];
                *cell = cell.max(v);
            }
        }
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{object_label, ObjectClass, ObjectLabel};

    fn label_at(pr: f64, pa: f64, doppler: f64) -> ObjectLabel {
        let g = RadarGeometry::default();
        let mut l = object_label(ObjectClass::Car, vec![[10, 10, 3]], &g);
        l.center_bins = [pr, pa];
        l.mean_doppler = doppler;
        l
    }

    #[test]
    fn kernel_values() {
        assert_eq!(gaussian(0.0, 0.0), 1.0);
        assert!((gaussian(1.0, 0.0) - (-4.5f64).exp()).abs() < 1e-15);
        assert!((gaussian(1.0, 0.0) - 0.011109).abs() < 1e-6);
        assert!((gaussian(0.0, 1.0) - 0.135335).abs() < 1e-6);
    }

    #[test]
    fn low_res_arithmetic() {
        let g = RadarGeometry::default();
        let labels = FrameLabels {
            objects: vec![label_at(13.0, 22.0, 12.0)],
        };
        let t = build_targets(&labels, &g, 4).unwrap();
        let idx = 3 * t.width + 5;
        assert_eq!(t.centers, vec![idx]);
        assert_eq!(t.heatmap[idx], 1.0);
        assert_eq!(t.offset[idx], 0.25);
        assert_eq!(t.offset[t.height * t.width + idx], 0.5);
        assert_eq!(t.doppler[idx], 12.0);
        assert_eq!(t.heatmap[4 * t.width + 5], (-4.5f64).exp());
        assert_eq!(t.heatmap[3 * t.width + 6], (-2.0f64).exp());
    }

    #[test]
    fn heatmap_decreases_away_from_center() {
        let g = RadarGeometry::default();
        let t = build_targets(&FrameLabels { objects: vec![label_at(30.0, 30.0, 5.0)] }, &g, 4).unwrap();
        let (ci, cj) = (7, 7);
        let at = |i: usize, j: usize| t.heatmap[i * t.width + j];
        for d in 1..7 {
            assert!(at(ci + d, cj) < at(ci + d - 1, cj));
            assert!(at(ci - d, cj) < at(ci - d + 1, cj) || at(ci - d + 1, cj) == 0.0);
            assert!(at(ci, cj + d) < at(ci, cj + d - 1) || at(ci, cj + d - 1) == 0.0);
        }
        assert!(t.heatmap.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(t.heatmap.iter().filter(|&&v| v == 1.0).count(), 1);
    }

    #[test]
    fn outside_center_and_bad_stride() {
        let g = RadarGeometry::default();
        let bad = FrameLabels { objects: vec![label_at(70.0, 3.0, 1.0)] };
        assert!(matches!(build_targets(&bad, &g, 4), Err(Error::Validation(_))));
        assert!(matches!(build_targets(&FrameLabels::default(), &g, 5), Err(Error::Config(_))));
    }
}
