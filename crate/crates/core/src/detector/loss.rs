use serde::{Deserialize, Serialize};

use super::targets::DetectionTargets;

pub const FOCAL_ALPHA: i32 = 2;
pub const FOCAL_BETA: i32 = 4;
pub const PROB_CLAMP: f64 = 1e-7;

/// Penalty-reduced pixel focal loss averaged over the number of centers.
/// Returns the loss and its gradient with respect to the (unclamped)
/// probabilities; clamped entries get zero gradient.
pub fn focal_loss(yhat: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    assert_eq!(yhat.len(), target.len());
    let n = target.iter().filter(|&&y| y == 1.0).count();
    let mut grad = vec![0.0; yhat.len()];
    if n == 0 {
        return (0.0, grad);
    }
    let mut sum = 0.0;
    for (k, (&p_raw, &y)) in yhat.iter().zip(target).enumerate() {
        let p = p_raw.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        let active = p == p_raw;
        let (l, g) = if y == 1.0 {
            let q = 1.0 - p;
            let l = -q.powi(FOCAL_ALPHA) * p.ln();
            let g = FOCAL_ALPHA as f64 * q.powi(FOCAL_ALPHA - 1) * p.ln() - q.powi(FOCAL_ALPHA) / p;
            (l, g)
        } else {
            let w = (1.0 - y).powi(FOCAL_BETA);
            let l = -w * p.powi(FOCAL_ALPHA) * (1.0 - p).ln();
            let g = -w
                * (FOCAL_ALPHA as f64 * p.powi(FOCAL_ALPHA - 1) * (1.0 - p).ln()
                    - p.powi(FOCAL_ALPHA) / (1.0 - p));
            (l, g)
        };
        sum += l;
        if active {
            grad[k] = g / n as f64;
        }
    }
    (sum / n as f64, grad)
}

/// L1 error at the center cells only, summed over `channels` components per
/// cell and averaged over centers. `pred` is `[N, channels, H, W]` for the
/// batch `targets`; `value(t, c, idx)` reads the target component.
fn masked_l1(
    pred: &[f64],
    targets: &[&DetectionTargets],
    channels: usize,
    value: impl Fn(&DetectionTargets, usize, usize) -> f64,
) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; pred.len()];
    let n: usize = targets.iter().map(|t| t.centers.len()).sum();
    if n == 0 {
        return (0.0, grad);
    }
    let mut sum = 0.0;
    for (b, t) in targets.iter().enumerate() {
        let hw = t.height * t.width;
        assert_eq!(pred.len(), targets.len() * channels * hw);
        for &idx in &t.centers {
            for c in 0..channels {
                let k = (b * channels + c) * hw + idx;
                let d = pred[k] - value(t, c, idx);
                sum += d.abs();
                let sign = if d == 0.0 { 0.0 } else { d.signum() };
                grad[k] = sign / n as f64;
            }
        }
    }
    (sum / n as f64, grad)
}

pub fn offset_loss(pred: &[f64], targets: &[&DetectionTargets]) -> (f64, Vec<f64>) {
    masked_l1(pred, targets, 2, |t, c, idx| t.offset[c * t.height * t.width + idx])
}

pub fn doppler_loss(pred: &[f64], targets: &[&DetectionTargets]) -> (f64, Vec<f64>) {
    masked_l1(pred, targets, 1, |t, _, idx| t.doppler[idx])
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub offset: f64,
    pub doppler: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            offset: 1.0,
            doppler: 1.0,
        }
    }
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DetLoss {
    pub heat: f64,
    pub offset: f64,
    pub doppler: f64,
    pub total: f64,
}

/// Gradients of the weighted total with respect to the three head outputs.
pub struct DetLossGrads {
    pub heat: Vec<f64>,
    pub offset: Vec<f64>,
    pub doppler: Vec<f64>,
}

pub fn total_detection_loss(
    heat: &[f64],
    offset: &[f64],
    doppler: &[f64],
    targets: &[&DetectionTargets],
    w: LossWeights,
) -> (DetLoss, DetLossGrads) {
    let heat_target: Vec<f64> = targets.iter().flat_map(|t| t.heatmap.iter().copied()).collect();
    let (lh, gh) = focal_loss(heat, &heat_target);
    let (lo, mut go) = offset_loss(offset, targets);
    let (ld, mut gd) = doppler_loss(doppler, targets);
    go.iter_mut().for_each(|g| *g *= w.offset);
    gd.iter_mut().for_each(|g| *g *= w.doppler);
    (
        DetLoss {
            heat: lh,
            offset: lo,
            doppler: ld,
            total: lh + w.offset * lo + w.doppler * ld,
        },
        DetLossGrads {
            heat: gh,
            offset: go,
            doppler: gd,
        },
    )
}
