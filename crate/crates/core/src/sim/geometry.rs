use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::fsutil::json_sha256;

/// Sampling grid of a range-angle-Doppler cube.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadarGeometry {
    pub range_bins: usize,
    pub angle_bins: usize,
    pub doppler_bins: usize,
    /// meters
    pub max_range: f64,
    /// radians, centered on boresight
    pub field_of_view: f64,
    /// m/s; Doppler bins span `[-v, v)`
    pub max_radial_velocity: f64,
    /// linear power of the complex Gaussian noise per cell
    pub noise_floor_power: f64,
}

impl Default for RadarGeometry {
    fn default() -> Self {
        Self {
            range_bins: 64,
            angle_bins: 64,
            doppler_bins: 32,
            max_range: 50.0,
            field_of_view: PI,
            max_radial_velocity: 13.0,
            noise_floor_power: 1.0,
        }
    }
}

/// RAD cell index `(range, angle, doppler)`.
pub type Cell = [u32; 3];

impl RadarGeometry {
    pub fn validate(&self) -> Result<()> {
        let ok = self.range_bins > 0
            && self.angle_bins > 0
            && self.doppler_bins > 0
            && self.max_range > 0.0
            && self.field_of_view > 0.0
            && self.field_of_view <= 2.0 * PI
            && self.max_radial_velocity > 0.0
            && self.noise_floor_power >= 0.0
            && self.noise_floor_power.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid radar geometry {self:?}")))
        }
    }

    pub fn range_resolution(&self) -> f64 {
        self.max_range / self.range_bins as f64
    }

    pub fn angle_resolution(&self) -> f64 {
        self.field_of_view / self.angle_bins as f64
    }

    pub fn doppler_resolution(&self) -> f64 {
        2.0 * self.max_radial_velocity / self.doppler_bins as f64
    }

    pub fn n_cells(&self) -> usize {
        self.range_bins * self.angle_bins * self.doppler_bins
    }

    /// Flat index, Doppler fastest, then angle, then range.
    #[inline]
    pub fn index(&self, r: usize, a: usize, d: usize) -> usize {
        (r * self.angle_bins + a) * self.doppler_bins + d
    }

    #[inline]
    pub fn cell_index(&self, c: Cell) -> usize {
        self.index(c[0] as usize, c[1] as usize, c[2] as usize)
    }

    #[inline]
    pub fn cell_at(&self, idx: usize) -> Cell {
        let d = idx % self.doppler_bins;
        let ra = idx / self.doppler_bins;
        [(ra / self.angle_bins) as u32, (ra % self.angle_bins) as u32, d as u32]
    }

    pub fn contains(&self, c: Cell) -> bool {
        (c[0] as usize) < self.range_bins
            && (c[1] as usize) < self.angle_bins
            && (c[2] as usize) < self.doppler_bins
    }

    /// Center of a range-angle bin in Cartesian meters; `x` is lateral, `y`
    /// along boresight.
    pub fn bin_to_cartesian(&self, range_bin: usize, angle_bin: usize) -> Result<(f64, f64)> {
        contract!(
            range_bin < self.range_bins && angle_bin < self.angle_bins,
            "bin ({range_bin}, {angle_bin}) outside {}x{}",
            self.range_bins,
            self.angle_bins
        );
        Ok(self.fractional_to_cartesian(range_bin as f64, angle_bin as f64))
    }

    /// Continuous version of [`Self::bin_to_cartesian`]: bin `i` has its center at
    /// coordinate `i`.
    pub fn fractional_to_cartesian(&self, range_pos: f64, angle_pos: f64) -> (f64, f64) {
        let r = (range_pos + 0.5) * self.range_resolution();
        // offset from the grid midline first, so mirrored bins get exactly negated angles
        let a = (angle_pos + 0.5 - self.angle_bins as f64 / 2.0) * self.angle_resolution();
        (r * a.sin(), r * a.cos())
    }

    /// Inverse of [`Self::fractional_to_cartesian`].
    pub fn cartesian_to_fractional(&self, x: f64, y: f64) -> (f64, f64) {
        let r = x.hypot(y);
        let a = x.atan2(y);
        (
            r / self.range_resolution() - 0.5,
            (a + self.field_of_view / 2.0) / self.angle_resolution() - 0.5,
        )
    }

    /// Nearest range-angle bin, clipped to the grid.
    pub fn cartesian_to_bin(&self, x: f64, y: f64) -> (usize, usize) {
        let (rp, ap) = self.cartesian_to_fractional(x, y);
        (
            clip_round(rp, self.range_bins),
            clip_round(ap, self.angle_bins),
        )
    }

    /// Doppler bin position (continuous) of a radial velocity.
    pub fn velocity_to_doppler(&self, v: f64) -> f64 {
        (v + self.max_radial_velocity) / self.doppler_resolution() - 0.5
    }

    pub fn doppler_to_velocity(&self, d: f64) -> f64 {
        (d + 0.5) * self.doppler_resolution() - self.max_radial_velocity
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn fingerprint(&self) -> String {
        json_sha256(self)
    }
}

/// Round half up, then clip into `[0, n)`.
pub fn clip_round(v: f64, n: usize) -> usize {
    let r = (v + 0.5).floor();
    if r.is_nan() || r < 0.0 {
        0
    } else {
        (r as usize).min(n - 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boresight_bin_maps_to_positive_y() {
        let g = RadarGeometry {
            angle_bins: 65,
            ..Default::default()
        };
        // with an odd angle count the middle bin is exactly on boresight
        let rb = (10.0 / g.range_resolution() - 0.5).round() as usize;
        let (x, y) = g.bin_to_cartesian(rb, 32).unwrap();
        assert!(x.abs() < 1e-12);
        assert!((y - (rb as f64 + 0.5) * g.range_resolution()).abs() < 1e-12);
        let (_, yy) = g.fractional_to_cartesian(10.0 / g.range_resolution() - 0.5, 32.0);
        assert!((yy - 10.0).abs() < 1e-12);
    }

    #[test]
    fn edge_angle_is_lateral() {
        let g = RadarGeometry::default();
        let (x, y) = g.bin_to_cartesian(20, g.angle_bins - 1).unwrap();
        let r = 20.5 * g.range_resolution();
        // half a bin short of +90 degrees
        let a = PI / 2.0 - g.angle_resolution() / 2.0;
        assert!((x - r * a.sin()).abs() < 1e-12 && (y - r * a.cos()).abs() < 1e-12);
        assert!(x > 0.99 * r && y < 0.05 * r);
    }

    #[test]
    fn out_of_range_bin_is_contract_error() {
        let g = RadarGeometry::default();
        assert!(matches!(g.bin_to_cartesian(64, 0), Err(Error::Contract(_))));
        assert!(g.bin_to_cartesian(0, 64).is_err());
    }

    #[test]
    fn every_bin_round_trips() {
        let g = RadarGeometry::default();
        for r in 0..g.range_bins {
            for a in 0..g.angle_bins {
                let (x, y) = g.bin_to_cartesian(r, a).unwrap();
                assert_eq!(g.cartesian_to_bin(x, y), (r, a));
            }
        }
    }

    #[test]
    fn flat_index_round_trips() {
        let g = RadarGeometry::default();
        for idx in [0, 1, 31, 32, 2047, 2048, g.n_cells() - 1] {
            assert_eq!(g.cell_index(g.cell_at(idx)), idx);
        }
    }

    #[test]
    fn velocity_doppler_inverse() {
        let g = RadarGeometry::default();
        for v in [-12.0, -3.3, 0.0, 5.5, 12.9] {
            assert!((g.doppler_to_velocity(g.velocity_to_doppler(v)) - v).abs() < 1e-12);
        }
    }
}
