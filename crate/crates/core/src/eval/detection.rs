use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::detector::Detection;
use crate::sim::ObjectLabel;

/// Distance thresholds averaged into mAP (meters and Doppler bins).
pub const DISTANCE_THRESHOLDS: [f64; 3] = [1.0, 3.0, 5.0];

/// Euclidean center distance within `k` meters (inclusive) and Doppler
/// difference under `k` bins (strict).
pub fn within_distance(pred: &Detection, gt: &ObjectLabel, k: f64) -> bool {
    xy_distance(pred, gt) <= k && (pred.doppler - gt.mean_doppler).abs() < k
}

fn xy_distance(pred: &Detection, gt: &ObjectLabel) -> f64 {
    (pred.center[0] - gt.center[0]).hypot(pred.center[1] - gt.center[1])
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchResult {
    /// Matched ground-truth index per prediction.
    pub pred_match: Vec<Option<usize>>,
    pub gt_matched: Vec<bool>,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

/// Greedy assignment: predictions in the given (descending score) order each
/// take the nearest unmatched ground truth within distance `k`, lower index
/// on ties.
pub fn match_detections(preds: &[Detection], gts: &[ObjectLabel], k: f64) -> MatchResult {
    let mut gt_matched = vec![false; gts.len()];
    let mut pred_match = Vec::with_capacity(preds.len());
    for p in preds {
        let mut best: Option<(f64, usize)> = None;
        for (j, g) in gts.iter().enumerate() {
            if gt_matched[j] || !within_distance(p, g, k) {
                continue;
            }
            let d = xy_distance(p, g);
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, j));
            }
        }
        if let Some((_, j)) = best {
            gt_matched[j] = true;
        }
        pred_match.push(best.map(|(_, j)| j));
    }
    let tp = pred_match.iter().filter(|m| m.is_some()).count();
    MatchResult {
        fp: preds.len() - tp,
        fn_: gts.len() - tp,
        tp,
        pred_match,
        gt_matched,
    }
}

/// All-point interpolated area under the precision-recall curve. Predictions
/// with equal scores enter the curve together, so the result does not depend
/// on their order. `None` when there is no ground truth.
pub fn average_precision(scored: &[(f64, bool)], n_gt: usize) -> Option<f64> {
    if n_gt == 0 {
        return None;
    }
    let mut sorted: Vec<(f64, bool)> = scored.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points: Vec<(f64, f64)> = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let s = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == s {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((tp as f64 / n_gt as f64, tp as f64 / (tp + fp) as f64));
    }
    // precision envelope from the right
    for k in (0..points.len().saturating_sub(1)).rev() {
        points[k].1 = points[k].1.max(points[k + 1].1);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (r, p) in points {
        ap += (r - prev_recall) * p;
        prev_recall = r;
    }
    Some(ap)
}

/// Mean of the available APs; `None` if none is defined.
pub fn mean_ap(aps: &[Option<f64>]) -> Option<f64> {
    let vals: Vec<f64> = aps.iter().flatten().copied().collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Accumulates matches over frames for every distance threshold.
#[derive(Clone, Debug)]
pub struct DetectionEvaluator {
    thresholds: Vec<f64>,
    scored: Vec<Vec<(f64, bool)>>,
    n_gt: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionMetrics {
    /// AP per distance threshold, keyed by the threshold formatted as text.
    pub ap: BTreeMap<String, Option<f64>>,
    pub map: Option<f64>,
    pub gt_count: usize,
    pub prediction_count: usize,
}

impl Default for DetectionEvaluator {
    fn default() -> Self {
        Self::new(&DISTANCE_THRESHOLDS)
    }
}

impl DetectionEvaluator {
    pub fn new(thresholds: &[f64]) -> Self {
        Self {
            thresholds: thresholds.to_vec(),
            scored: vec![Vec::new(); thresholds.len()],
            n_gt: 0,
        }
    }

    pub fn add_frame(&mut self, preds: &[Detection], gts: &[ObjectLabel]) {
        self.n_gt += gts.len();
        for (t, &k) in self.thresholds.iter().enumerate() {
            let m = match_detections(preds, gts, k);
            self.scored[t].extend(preds.iter().zip(&m.pred_match).map(|(p, mm)| (p.score, mm.is_some())));
        }
    }

    pub fn finish(&self) -> DetectionMetrics {
        let aps: Vec<Option<f64>> = self.scored.iter().map(|s| average_precision(s, self.n_gt)).collect();
        DetectionMetrics {
            ap: self
                .thresholds
                .iter()
                .zip(&aps)
                .map(|(k, ap)| (format!("{k}"), *ap))
                .collect(),
            map: mean_ap(&aps),
            gt_count: self.n_gt,
            prediction_count: self.scored.first().map_or(0, Vec::len),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{object_label, ObjectClass, RadarGeometry};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gt(x: f64, y: f64, d: f64) -> ObjectLabel {
        let g = RadarGeometry::default();
        let mut l = object_label(ObjectClass::Car, vec![[10, 10, 3]], &g);
        l.center = [x, y];
        l.mean_doppler = d;
        l
    }

    fn det(x: f64, y: f64, d: f64, score: f64) -> Detection {
        Detection {
            center: [x, y],
            score,
            doppler: d,
            center_bins: [0.0, 0.0],
        }
    }

    #[test]
    fn distance_rule_edges() {
        for k in [1.0, 3.0, 5.0] {
            assert!(within_distance(&det(1.0, 2.0, 4.0, 1.0), &gt(1.0, 2.0, 4.0), k));
            assert!(!within_distance(&det(1.0, 2.0, 4.0 + k, 1.0), &gt(1.0, 2.0, 4.0), k));
            assert!(within_distance(&det(1.0 + k, 2.0, 4.0, 1.0), &gt(1.0, 2.0, 4.0), k));
        }
    }

    #[test]
    fn simple_matches() {
        let m = match_detections(&[det(0.0, 10.0, 5.0, 0.9)], &[gt(0.5, 10.0, 5.0)], 1.0);
        assert_eq!((m.tp, m.fp, m.fn_), (1, 0, 0));
        let m = match_detections(
            &[det(0.0, 10.0, 5.0, 0.9), det(0.2, 10.0, 5.0, 0.8)],
            &[gt(0.1, 10.0, 5.0)],
            1.0,
        );
        assert_eq!(m.pred_match, vec![Some(0), None]);
        let m = match_detections(&[], &[gt(0.0, 1.0, 1.0), gt(5.0, 5.0, 1.0)], 3.0);
        assert_eq!(m.fn_, 2);
    }

    /// Enumerates every injective partial assignment that respects the
    /// distance rule and keeps the lexicographically best one, comparing
    /// predictions in order by (matched, closer, lower ground-truth index).
    fn exhaustive(preds: &[Detection], gts: &[ObjectLabel], k: f64) -> Vec<Option<usize>> {
        fn rec(
            i: usize,
            preds: &[Detection],
            gts: &[ObjectLabel],
            k: f64,
            used: &mut Vec<bool>,
            cur: &mut Vec<Option<usize>>,
            best: &mut Option<Vec<Option<usize>>>,
        ) {
            if i == preds.len() {
                let key = |a: &Vec<Option<usize>>| -> Vec<(u8, f64, usize)> {
                    a.iter()
                        .enumerate()
                        .map(|(p, m)| match m {
                            Some(j) => (0, xy_distance(&preds[p], &gts[*j]), *j),
                            None => (1, 0.0, 0),
                        })
                        .collect()
                };
                let better = match best {
                    None => true,
                    Some(b) => key(cur).partial_cmp(&key(b)) == Some(std::cmp::Ordering::Less),
                };
                if better {
                    *best = Some(cur.clone());
                }
                return;
            }
            cur.push(None);
            rec(i + 1, preds, gts, k, used, cur, best);
            cur.pop();
            for j in 0..gts.len() {
                if !used[j] && within_distance(&preds[i], &gts[j], k) {
                    used[j] = true;
                    cur.push(Some(j));
                    rec(i + 1, preds, gts, k, used, cur, best);
                    cur.pop();
                    used[j] = false;
                }
            }
        }
        let mut best = None;
        rec(0, preds, gts, k, &mut vec![false; gts.len()], &mut Vec::new(), &mut best);
        best.unwrap()
    }

    #[test]
    fn greedy_equals_exhaustive_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..2000 {
            let np = rng.gen_range(0..=4);
            let ng = rng.gen_range(0..=4);
            let gts: Vec<_> = (0..ng)
                .map(|_| gt(rng.gen_range(-4.0..4.0), rng.gen_range(0.0..8.0), rng.gen_range(0.0..6.0)))
                .collect();
            let mut preds: Vec<_> = (0..np)
                .map(|_| {
                    det(
                        rng.gen_range(-4.0..4.0),
                        rng.gen_range(0.0..8.0),
                        rng.gen_range(0.0..6.0),
                        rng.gen_range(0.0..1.0),
                    )
                })
                .collect();
            preds.sort_by(|a, b| b.score.total_cmp(&a.score));
            for k in [1.0, 3.0, 5.0] {
                assert_eq!(match_detections(&preds, &gts, k).pred_match, exhaustive(&preds, &gts, k));
            }
        }
    }

    #[test]
    fn hand_swept_ap() {
        assert_eq!(average_precision(&[(0.9, true), (0.8, false)], 2), Some(0.5));
        assert_eq!(average_precision(&[(0.9, true), (0.3, true)], 2), Some(1.0));
        assert_eq!(average_precision(&[], 0), None);
        assert_eq!(average_precision(&[], 3), Some(0.0));
    }

    #[test]
    fn map_arithmetic() {
        assert_eq!(mean_ap(&[Some(1.0), Some(1.0), Some(1.0)]), Some(1.0));
        let m = mean_ap(&[Some(0.67), Some(0.933), Some(0.958)]).unwrap();
        assert!((m - 0.853).abs() <= 0.001, "{m}");
        assert_eq!(mean_ap(&[None, None]), None);
    }

    proptest! {
        #[test]
        fn ap_invariant_under_monotone_rescale(
            items in proptest::collection::vec((0.0f64..1.0, any::<bool>()), 0..30),
            extra in 0usize..5,
            a in 0.1f64..5.0,
            b in -3.0f64..3.0,
        ) {
            let n_gt = items.iter().filter(|i| i.1).count() + extra;
            let mapped: Vec<(f64, bool)> = items.iter().map(|&(s, t)| ((a * s + b).exp(), t)).collect();
            let x = average_precision(&items, n_gt);
            let y = average_precision(&mapped, n_gt);
            match (x, y) {
                (Some(x), Some(y)) => {
                    prop_assert!((x - y).abs() < 1e-12);
                    prop_assert!((0.0..=1.0).contains(&x));
                }
                (None, None) => {}
                _ => prop_assert!(false),
            }
        }

        #[test]
        fn ap_invariant_under_permutation(
            items in proptest::collection::vec((0u8..5, any::<bool>()), 0..30),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            let items: Vec<(f64, bool)> = items.iter().map(|&(s, t)| (s as f64 / 4.0, t)).collect();
            let mut shuffled = items.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let n_gt = items.len() + 1;
            prop_assert_eq!(average_precision(&items, n_gt), average_precision(&shuffled, n_gt));
        }
    }
}
