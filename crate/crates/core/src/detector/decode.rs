use serde::{Deserialize, Serialize};

use crate::sim::RadarGeometry;

pub const DEFAULT_PEAK_THRESHOLD: f64 = 0.3;
pub const DEFAULT_MAX_DETECTIONS: usize = 32;

/// A decoded object center.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    /// Cartesian meters.
    pub center: [f64; 2],
    pub score: f64,
    /// Mean Doppler, in bins.
    pub doppler: f64,
    /// Continuous (range, angle) bin position of the center.
    pub center_bins: [f64; 2],
}

/// One frame's head outputs on the `h x w` grid, row-major.
#[derive(Clone, Copy, Debug)]
pub struct HeadMaps<'a> {
    pub height: usize,
    pub width: usize,
    pub heat: &'a [f64],
    /// `[2, h, w]`
    pub offset: &'a [f64],
    pub doppler: &'a [f64],
}

/// Local maxima of the heatmap (ties included) above `threshold`, best
/// `max_detections` by score then row-major index.
pub fn decode_peaks(
    maps: HeadMaps<'_>,
    threshold: f64,
    max_detections: usize,
    stride: usize,
    g: &RadarGeometry,
) -> Vec<Detection> {
    let (h, w) = (maps.height, maps.width);
    let mut peaks: Vec<(f64, usize)> = Vec::new();
    for i in 0..h {
        for j in 0..w {
            let v = maps.heat[i * w + j];
            if v <= threshold {
                continue;
            }
            let mut is_max = true;
            'scan: for ni in i.saturating_sub(1)..=(i + 1).min(h - 1) {
                for nj in j.saturating_sub(1)..=(j + 1).min(w - 1) {
                    if maps.heat[ni * w + nj] > v {
                        is_max = false;
                        break 'scan;
                    }
                }
            }
            if is_max {
                peaks.push((v, i * w + j));
            }
        }
    }
    peaks.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    peaks.truncate(max_detections);
    peaks
        .into_iter()
        .map(|(score, idx)| {
            let (i, j) = (idx / w, idx % w);
            let pr = (i as f64 + maps.offset[idx]) * stride as f64;
            let pa = (j as f64 + maps.offset[h * w + idx]) * stride as f64;
            let (x, y) = g.fractional_to_cartesian(pr, pa);
            Detection {
                center: [x, y],
                score,
                doppler: maps.doppler[idx],
                center_bins: [pr, pa],
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::targets::build_targets;
    use crate::sim::{annotate_rad, generate_world};

    fn maps<'a>(h: usize, w: usize, heat: &'a [f64], off: &'a [f64], dop: &'a [f64]) -> HeadMaps<'a> {
        HeadMaps {
            height: h,
            width: w,
            heat,
            offset: off,
            doppler: dop,
        }
    }

    #[test]
    fn below_threshold_is_empty() {
        let g = RadarGeometry::default();
        let heat = vec![0.29; 16];
        let z = vec![0.0; 32];
        assert!(decode_peaks(maps(4, 4, &heat, &z, &z[..16]), 0.3, 32, 4, &g).is_empty());
    }

    #[test]
    fn isolated_peak_maps_to_cell_center() {
        let g = RadarGeometry::default();
        let mut heat = vec![0.0; 16 * 16];
        heat[5 * 16 + 9] = 1.0;
        let z = vec![0.0; 2 * 256];
        let d = decode_peaks(maps(16, 16, &heat, &z, &z[..256]), 0.3, 32, 4, &g);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].score, 1.0);
        let (x, y) = g.fractional_to_cartesian(20.0, 36.0);
        assert_eq!(d[0].center, [x, y]);
    }

    /// Brute-force reference: every cell compared with all of its in-bounds
    /// neighbours, results sorted by a full key.
    fn oracle(heat: &[f64], h: usize, w: usize, tau: f64) -> Vec<usize> {
        let mut out = Vec::new();
        for idx in 0..h * w {
            let (i, j) = ((idx / w) as i64, (idx % w) as i64);
            let mut ok = heat[idx] > tau;
            for di in -1..=1i64 {
                for dj in -1..=1i64 {
                    let (ni, nj) = (i + di, j + dj);
                    if ni >= 0 && nj >= 0 && ni < h as i64 && nj < w as i64 && heat[(ni * w as i64 + nj) as usize] > heat[idx] {
                        ok = false;
                    }
                }
            }
            if ok {
                out.push(idx);
            }
        }
        out.sort_by(|&a, &b| heat[b].partial_cmp(&heat[a]).unwrap().then(a.cmp(&b)));
        out
    }

    #[test]
    fn plateau_ties_both_kept_and_match_oracle() {
        use rand::{Rng, SeedableRng};
        let g = RadarGeometry::default();
        let mut heat = vec![0.0; 8 * 8];
        heat[2 * 8 + 3] = 0.8;
        heat[2 * 8 + 4] = 0.8;
        let z = vec![0.0; 128];
        let d = decode_peaks(maps(8, 8, &heat, &z, &z[..64]), 0.3, 32, 4, &g);
        assert_eq!(d.len(), 2);
        assert!(d[0].center_bins[1] < d[1].center_bins[1]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let heat: Vec<f64> = (0..64).map(|_| (rng.gen_range(0..5) as f64) / 4.0).collect();
            let d = decode_peaks(maps(8, 8, &heat, &z, &z[..64]), 0.3, 64, 4, &g);
            let want = oracle(&heat, 8, 8, 0.3);
            let got: Vec<usize> = d
                .iter()
                .map(|p| (p.center_bins[0] / 4.0) as usize * 8 + (p.center_bins[1] / 4.0) as usize)
                .collect();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn targets_decode_to_their_own_centers() {
        let g = RadarGeometry::default();
        for seed in 0..20 {
            let labels = annotate_rad(&generate_world(seed, 4, &g).unwrap(), &g);
            let t = build_targets(&labels, &g, 4).unwrap();
            let d = decode_peaks(
                maps(t.height, t.width, &t.heatmap, &t.offset, &t.doppler),
                0.3,
                32,
                4,
                &g,
            );
            assert_eq!(d.len(), labels.objects.len());
            for o in &labels.objects {
                let hit = d.iter().find(|p| {
                    let dr = p.center_bins[0] - o.center_bins[0];
                    let da = p.center_bins[1] - o.center_bins[1];
                    (dr * dr + da * da).sqrt() <= 0.5 * 4.0
                });
                let hit = hit.expect("center recovered");
                assert_eq!(hit.doppler, o.mean_doppler);
            }
        }
    }
}
