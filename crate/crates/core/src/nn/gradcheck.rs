//! Central finite-difference verification of hand-written backward passes.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::module::{named_grads, zero_grads, Module, Slot};
use super::tensor::Tensor;
use crate::error::{contract, Result};

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Finite-difference step, in `[1e-6, 1e-3]`.
    pub eps: f64,
    /// Gradients smaller than `floor_scale * max(1, |loss|)` are compared in
    /// absolute rather than relative terms; below that level round-off in the
    /// central difference dominates.
    pub floor_scale: f64,
    /// Check at most this many coordinates per tensor (sampled); `None` checks all.
    pub max_coords_per_tensor: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            floor_scale: 1e-6,
            max_coords_per_tensor: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(tensor name, flat index, analytic, numeric)` at the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
    pub coords_checked: usize,
}

/// Compares analytic gradients against central differences.
///
/// `f` runs one forward+backward on `model` for `input` and returns the scalar
/// loss together with the gradient with respect to `input` (any tensor when no
/// input is checked). Parameter gradients must be accumulated into the model.
pub fn grad_check<M, F>(
    model: &mut M,
    input: Option<Tensor>,
    mut f: F,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    M: Module,
    F: FnMut(&mut M, &Tensor) -> Result<(f64, Tensor)>,
{
    contract!(
        (1e-6..=1e-3).contains(&cfg.eps),
        "eps {} outside [1e-6, 1e-3]",
        cfg.eps
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut x = input.unwrap_or_else(|| Tensor::zeros(&[0]));
    let check_input = !x.is_empty();

    zero_grads(model);
    let (loss0, gx) = f(model, &x)?;
    let grads = named_grads(model);
    let floor = cfg.floor_scale * loss0.abs().max(1.0);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coords_checked: 0,
    };
    let mut record = |name: &str, idx: usize, analytic: f64, numeric: f64| {
        let err = (analytic - numeric).abs() / numeric.abs().max(floor);
        report.coords_checked += 1;
        if report.worst.is_none() || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst = Some((name.to_string(), idx, analytic, numeric));
        }
    };

    let pick = |len: usize, rng: &mut ChaCha8Rng| -> Vec<usize> {
        match cfg.max_coords_per_tensor {
            Some(m) if m < len => {
                let mut v = sample(rng, len, m).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..len).collect(),
        }
    };

    for (name, grad) in &grads {
        for idx in pick(grad.len(), &mut rng) {
            let mut eval = |delta: f64, model: &mut M| -> Result<f64> {
                nudge(model, name, idx, delta);
                let (l, _) = f(model, &x)?;
                nudge(model, name, idx, -delta);
                Ok(l)
            };
            let lp = eval(cfg.eps, model)?;
            let lm = eval(-cfg.eps, model)?;
            record(name, idx, grad.data()[idx], (lp - lm) / (2.0 * cfg.eps));
        }
    }

    if check_input {
        for idx in pick(x.len(), &mut rng) {
            let orig = x.data()[idx];
            x.data_mut()[idx] = orig + cfg.eps;
            let (lp, _) = f(model, &x)?;
            x.data_mut()[idx] = orig - cfg.eps;
            let (lm, _) = f(model, &x)?;
            x.data_mut()[idx] = orig;
            record("input", idx, gx.data()[idx], (lp - lm) / (2.0 * cfg.eps));
        }
    }
    zero_grads(model);
    Ok(report)
}

fn nudge<M: Module>(model: &mut M, name: &str, idx: usize, delta: f64) {
    model.visit("", &mut |n, slot| {
        if n == name {
            if let Slot::Param(p) = slot {
                p.value.data_mut()[idx] += delta;
            }
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::module::join;
    use crate::nn::tensor::Param;

    struct Scalar {
        theta: Param,
        backward_scale: f64,
    }

    impl Module for Scalar {
        fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
            f(&join(prefix, "theta"), Slot::Param(&mut self.theta));
        }
    }

    fn linear(m: &mut Scalar, _x: &Tensor) -> Result<(f64, Tensor)> {
        let th = m.theta.value.data()[0];
        m.theta.grad.data_mut()[0] += 3.0 * m.backward_scale;
        Ok((3.0 * th, Tensor::zeros(&[0])))
    }

    #[test]
    fn linear_function_has_zero_error() {
        let mut m = Scalar {
            theta: Param::new(Tensor::full(&[1], 0.7)),
            backward_scale: 1.0,
        };
        let r = grad_check(&mut m, None, linear, &GradCheckConfig::default()).unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
        assert_eq!(r.coords_checked, 1);
    }

    #[test]
    fn corrupted_backward_is_caught() {
        let mut m = Scalar {
            theta: Param::new(Tensor::full(&[1], 0.7)),
            backward_scale: 2.0,
        };
        let r = grad_check(&mut m, None, linear, &GradCheckConfig::default()).unwrap();
        assert!((r.max_rel_error - 1.0).abs() < 1e-6, "{r:?}");
    }

    #[test]
    fn eps_out_of_range_rejected() {
        let mut m = Scalar {
            theta: Param::new(Tensor::full(&[1], 0.0)),
            backward_scale: 1.0,
        };
        let cfg = GradCheckConfig {
            eps: 1e-2,
            ..Default::default()
        };
        assert!(grad_check(&mut m, None, linear, &cfg).is_err());
    }
}
