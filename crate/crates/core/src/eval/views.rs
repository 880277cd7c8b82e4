use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::sim::{class_name, Cell, FrameLabels, RadarGeometry, NUM_CLASSES};

/// Class scores for one RAD cell; index 0 is background.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellPrediction {
    pub cell: Cell,
    pub probs: [f64; NUM_CLASSES],
}

impl CellPrediction {
    pub fn one_hot(cell: Cell, class: u8) -> Self {
        let mut probs = [0.0; NUM_CLASSES];
        probs[class as usize] = 1.0;
        Self { cell, probs }
    }

    /// Arg-max class, lowest id on ties.
    pub fn class(&self) -> u8 {
        let mut best = 0;
        for c in 1..NUM_CLASSES {
            if self.probs[c] > self.probs[best] {
                best = c;
            }
        }
        best as u8
    }
}

/// Range-angle and range-Doppler class maps, row-major with range as rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewMasks {
    pub range_bins: usize,
    pub angle_bins: usize,
    pub doppler_bins: usize,
    pub ra: Vec<u8>,
    pub rd: Vec<u8>,
}

impl ViewMasks {
    pub fn background(g: &RadarGeometry) -> Self {
        Self {
            range_bins: g.range_bins,
            angle_bins: g.angle_bins,
            doppler_bins: g.doppler_bins,
            ra: vec![0; g.range_bins * g.angle_bins],
            rd: vec![0; g.range_bins * g.doppler_bins],
        }
    }

    pub fn ra_row(&self, r: usize) -> &[u8] {
        &self.ra[r * self.angle_bins..(r + 1) * self.angle_bins]
    }

    pub fn rd_row(&self, r: usize) -> &[u8] {
        &self.rd[r * self.doppler_bins..(r + 1) * self.doppler_bins]
    }
}

/// Projects per-cell predictions onto both views. A pixel takes the class
/// whose predicted cells along the collapsed axis carry the largest summed
/// probability (lowest id on ties). Classes are then limited, per range row,
/// to those that win somewhere in both views, so the two maps always agree on
/// which objects each range row contains.
pub fn project_to_views(preds: &[CellPrediction], g: &RadarGeometry) -> ViewMasks {
    let (nr, na, nd) = (g.range_bins, g.angle_bins, g.doppler_bins);
    let mut ra_score = vec![[0.0f64; NUM_CLASSES]; nr * na];
    let mut rd_score = vec![[0.0f64; NUM_CLASSES]; nr * nd];
    for p in preds {
        let c = p.class() as usize;
        if c == 0 {
            continue;
        }
        let [r, a, d] = p.cell.map(|v| v as usize);
        ra_score[r * na + a][c] += p.probs[c];
        rd_score[r * nd + d][c] += p.probs[c];
    }
    let winner = |s: &[f64; NUM_CLASSES], allowed: &dyn Fn(usize) -> bool| -> u8 {
        let mut best = 0usize;
        for c in 1..NUM_CLASSES {
            if s[c] > 0.0 && allowed(c) && (best == 0 || s[c] > s[best]) {
                best = c;
            }
        }
        best as u8
    };
    let mut masks = ViewMasks::background(g);
    for r in 0..nr {
        let mut ra_set = [false; NUM_CLASSES];
        let mut rd_set = [false; NUM_CLASSES];
        for a in 0..na {
            ra_set[winner(&ra_score[r * na + a], &|_| true) as usize] = true;
        }
        for d in 0..nd {
            rd_set[winner(&rd_score[r * nd + d], &|_| true) as usize] = true;
        }
        let keep = |c: usize| ra_set[c] && rd_set[c];
        for a in 0..na {
            masks.ra[r * na + a] = winner(&ra_score[r * na + a], &keep);
        }
        for d in 0..nd {
            masks.rd[r * nd + d] = winner(&rd_score[r * nd + d], &keep);
        }
    }
    masks
}

/// Ground-truth views: every annotated cell as a one-hot prediction.
pub fn project_labels(labels: &FrameLabels, g: &RadarGeometry) -> ViewMasks {
    let preds: Vec<CellPrediction> = labels
        .objects
        .iter()
        .flat_map(|o| o.cells.iter().map(move |&c| CellPrediction::one_hot(c, o.class.id())))
        .collect();
    project_to_views(&preds, g)
}

/// Fraction of range rows whose RA and RD rows hold the same set of
/// non-background classes.
pub fn view_consistency(m: &ViewMasks) -> f64 {
    if m.range_bins == 0 {
        return 1.0;
    }
    let set = |row: &[u8]| -> BTreeSet<u8> { row.iter().copied().filter(|&c| c != 0).collect() };
    let agree = (0..m.range_bins).filter(|&r| set(m.ra_row(r)) == set(m.rd_row(r))).count();
    agree as f64 / m.range_bins as f64
}

/// Split-level intersection and union counts per class for one view.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IouAccumulator {
    pub intersection: [u64; NUM_CLASSES],
    pub union: [u64; NUM_CLASSES],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IouReport {
    /// IoU per class name; `None` for classes absent from both prediction
    /// and ground truth.
    pub per_class: std::collections::BTreeMap<String, Option<f64>>,
    pub miou: Option<f64>,
}

impl IouAccumulator {
    pub fn add(&mut self, pred: &[u8], gt: &[u8]) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(Error::Contract(format!("mask sizes differ: {} vs {}", pred.len(), gt.len())));
        }
        for (&p, &t) in pred.iter().zip(gt) {
            let (p, t) = (p as usize, t as usize);
            if p >= NUM_CLASSES || t >= NUM_CLASSES {
                return Err(Error::Contract(format!("class id {} out of range", p.max(t))));
            }
            if p == t {
                self.intersection[p] += 1;
                self.union[p] += 1;
            } else {
                self.union[p] += 1;
                self.union[t] += 1;
            }
        }
        Ok(())
    }

    pub fn report(&self) -> IouReport {
        let ious: Vec<Option<f64>> = (0..NUM_CLASSES)
            .map(|c| (self.union[c] > 0).then(|| self.intersection[c] as f64 / self.union[c] as f64))
            .collect();
        let present: Vec<f64> = ious.iter().flatten().copied().collect();
        IouReport {
            per_class: ious
                .iter()
                .enumerate()
                .map(|(c, v)| (class_name(c as u8).to_string(), *v))
                .collect(),
            miou: (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64),
        }
    }
}

/// Both views' accumulators.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ViewIou {
    pub ra: IouAccumulator,
    pub rd: IouAccumulator,
}

impl ViewIou {
    pub fn add(&mut self, pred: &ViewMasks, gt: &ViewMasks) -> Result<()> {
        self.ra.add(&pred.ra, &gt.ra)?;
        self.rd.add(&pred.rd, &gt.rd)
    }
}

pub fn iou_report(pred: &[u8], gt: &[u8]) -> Result<IouReport> {
    let mut acc = IouAccumulator::default();
    acc.add(pred, gt)?;
    Ok(acc.report())
}

pub const PALETTE: [[u8; 3]; NUM_CLASSES] = [
    [0, 0, 0],
    [230, 60, 60],
    [60, 180, 75],
    [70, 120, 240],
    [250, 200, 40],
];

/// Binary PPM (P6) of a class map with the fixed palette.
pub fn write_ppm(path: &Path, mask: &[u8], rows: usize, cols: usize) -> Result<()> {
    if mask.len() != rows * cols {
        return Err(Error::Contract(format!("mask has {} pixels, expected {rows}x{cols}", mask.len())));
    }
    let mut out = Vec::with_capacity(20 + 3 * mask.len());
    write!(out, "P6\n{cols} {rows}\n255\n").expect("write to vec");
    for &c in mask {
        out.extend_from_slice(&PALETTE[(c as usize).min(NUM_CLASSES - 1)]);
    }
    write_atomic(path, &out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small() -> RadarGeometry {
        RadarGeometry {
            range_bins: 4,
            angle_bins: 3,
            doppler_bins: 3,
            ..Default::default()
        }
    }

    #[test]
    fn empty_predictions_are_background() {
        let g = small();
        let m = project_to_views(&[], &g);
        assert!(m.ra.iter().chain(&m.rd).all(|&c| c == 0));
        assert_eq!(view_consistency(&m), 1.0);
    }

    #[test]
    fn single_cell_lands_in_both_views() {
        let g = small();
        let m = project_to_views(&[CellPrediction::one_hot([2, 1, 0], 3)], &g);
        assert_eq!(m.ra[2 * 3 + 1], 3);
        assert_eq!(m.rd[2 * 3], 3);
        assert_eq!(m.ra.iter().filter(|&&c| c != 0).count(), 1);
    }

    fn pred(cell: Cell, class: usize, p: f64) -> CellPrediction {
        let mut probs = [(1.0 - p) / 4.0; NUM_CLASSES];
        probs[class] = p;
        CellPrediction { cell, probs }
    }

    #[test]
    fn two_classes_in_one_ra_column() {
        let g = small();
        for (pa, pb) in [(0.9, 0.6), (0.6, 0.9), (0.7, 0.7)] {
            let m = project_to_views(&[pred([1, 1, 0], 2, pa), pred([1, 1, 2], 4, pb)], &g);
            let want = if pa > pb {
                2
            } else if pb > pa {
                4
            } else {
                2
            };
            assert_eq!(m.ra[3 + 1], want, "{pa} {pb}");
            assert_eq!(view_consistency(&m), 1.0);
        }
    }

    #[test]
    fn two_cell_enumeration() {
        let g = small();
        let levels = [0.3, 0.5, 0.7, 0.9];
        for ca in 1..NUM_CLASSES {
            for cb in 1..NUM_CLASSES {
                for &pa in &levels {
                    for &pb in &levels {
                        let m = project_to_views(&[pred([1, 1, 0], ca, pa), pred([1, 1, 2], cb, pb)], &g);
                        // reference: summed score per class, first max by id
                        let mut s = [0.0; NUM_CLASSES];
                        s[ca] += pa;
                        s[cb] += pb;
                        let want = (1..NUM_CLASSES).fold(0, |b, c| if b == 0 || s[c] > s[b] { c } else { b });
                        let want = if s[want] > 0.0 { want } else { 0 };
                        let want = want as u8;
                        assert_eq!(m.ra[3 + 1], want);
                        // the losing class has no RA pixel in this row, so its
                        // RD pixel falls back to background
                        let keep = |c: usize| if c as u8 == want { want } else { 0 };
                        assert_eq!(m.rd[3], keep(ca));
                        assert_eq!(m.rd[3 + 2], keep(cb));
                        assert_eq!(view_consistency(&m), 1.0);
                    }
                }
            }
        }
    }

    #[test]
    fn projection_is_always_consistent() {
        let g = RadarGeometry {
            range_bins: 5,
            angle_bins: 4,
            doppler_bins: 4,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..500 {
            let n = rng.gen_range(0..30);
            let mut seen = std::collections::HashSet::new();
            let preds: Vec<CellPrediction> = (0..n)
                .filter_map(|_| {
                    let cell = [rng.gen_range(0..5), rng.gen_range(0..4), rng.gen_range(0..4)];
                    seen.insert(cell).then(|| {
                        let mut probs = [0.0; NUM_CLASSES];
                        probs.iter_mut().for_each(|p| *p = rng.gen_range(0.0..1.0));
                        let s: f64 = probs.iter().sum();
                        probs.iter_mut().for_each(|p| *p /= s);
                        CellPrediction { cell, probs }
                    })
                })
                .collect();
            assert_eq!(view_consistency(&project_to_views(&preds, &g)), 1.0);
        }
    }

    #[test]
    fn corrupted_rd_row_breaks_consistency() {
        let g = small();
        let mut m = project_to_views(&[CellPrediction::one_hot([2, 1, 0], 3)], &g);
        m.rd[2 * 3 + 2] = 1;
        assert!(view_consistency(&m) < 1.0);
    }

    #[test]
    fn iou_counting() {
        let r = iou_report(&[1, 1, 0, 2], &[1, 1, 0, 2]).unwrap();
        assert!(r.per_class.values().flatten().all(|&v| v == 1.0));
        assert_eq!(r.per_class["truck"], None);
        let r = iou_report(&[1, 1, 0, 0], &[0, 0, 1, 1]).unwrap();
        assert_eq!(r.per_class["person"], Some(0.0));
        // prediction 2N cells, ground truth 2N cells, overlap N
        let n = 5;
        let mut p = vec![0u8; 3 * n];
        let mut t = vec![0u8; 3 * n];
        p[..2 * n].iter_mut().for_each(|v| *v = 3);
        t[n..].iter_mut().for_each(|v| *v = 3);
        let r = iou_report(&p, &t).unwrap();
        assert!((r.per_class["car"].unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let sym = iou_report(&t, &p).unwrap();
        assert_eq!(r, sym);
    }

    #[test]
    fn ppm_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ppm");
        write_ppm(&p, &[0, 1, 2, 3, 4, 0], 2, 3).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert!(bytes.starts_with(b"P6\n3 2\n255\n"));
        assert_eq!(bytes.len(), 11 + 18);
    }
}
