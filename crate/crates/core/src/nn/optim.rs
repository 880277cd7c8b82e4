use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::module::{Module, Slot};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Learning-rate schedule, evaluated per epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LrSchedule {
    Constant { lr: f64 },
    /// `lr * factor^(epoch / every)`
    Step { lr: f64, factor: f64, every: usize },
    /// Half-cosine from `lr` at epoch 0 down to 0 at `total` epochs.
    Cosine { lr: f64, total: usize },
}

impl LrSchedule {
    pub fn at(&self, epoch: usize) -> f64 {
        match *self {
            LrSchedule::Constant { lr } => lr,
            LrSchedule::Step { lr, factor, every } => {
                lr * factor.powi((epoch / every.max(1)) as i32)
            }
            LrSchedule::Cosine { lr, total } => {
                let t = (epoch as f64 / total.max(1) as f64).min(1.0);
                0.5 * lr * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }

    pub fn base(&self) -> f64 {
        match *self {
            LrSchedule::Constant { lr }
            | LrSchedule::Step { lr, .. }
            | LrSchedule::Cosine { lr, .. } => lr,
        }
    }
}

fn check_finite_grads<M: Module + ?Sized>(model: &mut M) -> Result<()> {
    let mut bad = None;
    model.visit("", &mut |name, slot| {
        if let Slot::Param(p) = slot {
            if bad.is_none() && !p.grad.all_finite() {
                bad = Some(name.to_string());
            }
        }
    });
    match bad {
        Some(name) => Err(Error::NonFinite(format!("gradient of {name}"))),
        None => Ok(()),
    }
}

/// Adam with bias correction. Moment buffers are keyed by parameter name.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    /// One update of every parameter from its accumulated gradient. Aborts
    /// without touching anything if any gradient is non-finite.
    pub fn step<M: Module + ?Sized>(&mut self, model: &mut M) -> Result<()> {
        check_finite_grads(model)?;
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let moments = &mut self.moments;
        model.visit("", &mut |name, slot| {
            let Slot::Param(p) = slot else { return };
            let (m, v) = moments
                .entry(name.to_string())
                .or_insert_with(|| (vec![0.0; p.value.len()], vec![0.0; p.value.len()]));
            if m.len() != p.value.len() {
                // parameter was rebuilt with a new shape (pruning); restart its moments
                *m = vec![0.0; p.value.len()];
                *v = vec![0.0; p.value.len()];
            }
            let g = p.grad.data();
            for (i, w) in p.value.data_mut().iter_mut().enumerate() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        });
        Ok(())
    }

    /// Moment buffers as named tensors (`m.<param>`, `v.<param>`), for resume.
    pub fn state_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (name, (m, v)) in &self.moments {
            out.push((
                format!("m.{name}"),
                Tensor::from_vec(&[m.len()], m.clone()).expect("1-d"),
            ));
            out.push((
                format!("v.{name}"),
                Tensor::from_vec(&[v.len()], v.clone()).expect("1-d"),
            ));
        }
        out
    }

    pub fn load_state(&mut self, step: u64, tensors: &[(String, Tensor)]) -> Result<()> {
        self.step = step;
        self.moments.clear();
        for (name, t) in tensors {
            let (kind, pname) = name
                .split_once('.')
                .ok_or_else(|| Error::Validation(format!("bad optimizer entry {name}")))?;
            let e = self
                .moments
                .entry(pname.to_string())
                .or_insert_with(|| (Vec::new(), Vec::new()));
            match kind {
                "m" => e.0 = t.data().to_vec(),
                "v" => e.1 = t.data().to_vec(),
                _ => return Err(Error::Validation(format!("bad optimizer entry {name}"))),
            }
        }
        Ok(())
    }
}

/// SGD with heavy-ball momentum and L2 weight decay.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub step: u64,
    velocity: BTreeMap<String, Vec<f64>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            momentum,
            weight_decay,
            step: 0,
            velocity: BTreeMap::new(),
        }
    }

    pub fn step<M: Module + ?Sized>(&mut self, model: &mut M) -> Result<()> {
        check_finite_grads(model)?;
        self.step += 1;
        let (lr, mu, wd) = (self.lr, self.momentum, self.weight_decay);
        let vel = &mut self.velocity;
        model.visit("", &mut |name, slot| {
            let Slot::Param(p) = slot else { return };
            let v = vel
                .entry(name.to_string())
                .or_insert_with(|| vec![0.0; p.value.len()]);
            if v.len() != p.value.len() {
                *v = vec![0.0; p.value.len()];
            }
            let g = p.grad.data();
            for (i, w) in p.value.data_mut().iter_mut().enumerate() {
                let gi = g[i] + wd * *w;
                v[i] = mu * v[i] + gi;
                *w -= lr * v[i];
            }
        });
        Ok(())
    }

    pub fn state_tensors(&self) -> Vec<(String, Tensor)> {
        self.velocity
            .iter()
            .map(|(n, v)| {
                (
                    format!("u.{n}"),
                    Tensor::from_vec(&[v.len()], v.clone()).expect("1-d"),
                )
            })
            .collect()
    }

    pub fn load_state(&mut self, step: u64, tensors: &[(String, Tensor)]) -> Result<()> {
        self.step = step;
        self.velocity.clear();
        for (name, t) in tensors {
            let pname = name
                .strip_prefix("u.")
                .ok_or_else(|| Error::Validation(format!("bad optimizer entry {name}")))?;
            self.velocity.insert(pname.to_string(), t.data().to_vec());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::module::join;
    use crate::nn::tensor::Param;

    struct Two {
        a: Param,
        b: Param,
    }

    impl Module for Two {
        fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
            f(&join(prefix, "a"), Slot::Param(&mut self.a));
            f(&join(prefix, "b"), Slot::Param(&mut self.b));
        }
    }

    fn two(v: f64) -> Two {
        Two {
            a: Param::new(Tensor::full(&[3], v)),
            b: Param::new(Tensor::full(&[3], v)),
        }
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut m = two(0.3);
        let mut opt = Adam::new(0.1);
        for _ in 0..10 {
            opt.step(&mut m).unwrap();
        }
        assert!(m.a.value.data().iter().all(|&v| v == 0.3));
    }

    #[test]
    fn first_step_hand_value() {
        let mut m = Two {
            a: Param::new(Tensor::zeros(&[1])),
            b: Param::new(Tensor::zeros(&[1])),
        };
        m.a.grad.fill(1.0);
        let mut opt = Adam::new(0.1);
        opt.step(&mut m).unwrap();
        // mhat = 1, vhat = 1 -> theta = -0.1 / (1 + 1e-8)
        let want = -0.1 / (1.0 + 1e-8);
        assert!((m.a.value.data()[0] - want).abs() < 1e-15);
        assert!((m.a.value.data()[0] + 0.1).abs() < 1e-8);
    }

    #[test]
    fn identical_params_identical_updates() {
        let mut m = two(1.0);
        let mut opt = Adam::new(0.01);
        for k in 0..5 {
            m.a.grad.fill(0.1 * k as f64 - 0.2);
            m.b.grad.fill(0.1 * k as f64 - 0.2);
            opt.step(&mut m).unwrap();
        }
        assert_eq!(m.a.value, m.b.value);
    }

    #[test]
    fn nan_gradient_aborts_step() {
        let mut m = two(1.0);
        m.a.grad.fill(0.5);
        m.b.grad.data_mut()[1] = f64::NAN;
        let mut opt = Adam::new(0.1);
        assert!(matches!(opt.step(&mut m), Err(Error::NonFinite(_))));
        assert!(m.a.value.data().iter().all(|&v| v == 1.0));
        assert_eq!(opt.step, 0);
    }

    #[test]
    fn schedules() {
        let s = LrSchedule::Step {
            lr: 1e-3,
            factor: 0.1,
            every: 20,
        };
        assert_eq!(s.at(0), 1e-3);
        assert!((s.at(20) - 1e-4).abs() < 1e-18);
        assert!((s.at(45) - 1e-5).abs() < 1e-18);
        let c = LrSchedule::Cosine { lr: 0.05, total: 60 };
        assert_eq!(c.at(0), 0.05);
        assert!((c.at(30) - 0.025).abs() < 1e-12);
        assert!(c.at(60).abs() < 1e-12);
    }

    #[test]
    fn adam_state_round_trip() {
        let mut m = two(1.0);
        m.a.grad.fill(0.5);
        let mut opt = Adam::new(0.1);
        opt.step(&mut m).unwrap();
        let mut restored = Adam::new(0.1);
        restored.load_state(opt.step, &opt.state_tensors()).unwrap();
        let mut m2 = Two {
            a: m.a.clone(),
            b: m.b.clone(),
        };
        opt.step(&mut m).unwrap();
        restored.step(&mut m2).unwrap();
        assert_eq!(m.a.value, m2.a.value);
    }
}
