use super::module::{join, Module, Slot};
use super::tensor::{Param, Tensor};
use crate::error::{contract, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Batch normalization over the channel axis of `[N, C, H, W]` maps or
/// `[M, C]` site-feature matrices. Statistics are taken over every other axis.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub eps: f64,
    pub momentum: f64,
    cache: Option<BnCache>,
}

#[derive(Clone, Debug)]
enum BnCache {
    Train { xhat: Vec<f64>, inv_std: Vec<f64> },
    Eval { xhat: Vec<f64>, inv_std: Vec<f64> },
}

/// `(outer, channels, inner)` such that element `(o, c, i)` lives at
/// `(o * channels + c) * inner + i`.
fn layout(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match shape.len() {
        2 => Ok((shape[0], shape[1], 1)),
        4 => Ok((shape[0], shape[1], shape[2] * shape[3])),
        _ => Err(crate::Error::Contract(format!(
            "batch norm expects a 2-d or 4-d tensor, got {shape:?}"
        ))),
    }
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::new(Tensor::full(&[channels], 1.0)),
            beta: Param::new(Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], 1.0),
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.len()
    }

    fn check(&self, x: &Tensor) -> Result<(usize, usize, usize)> {
        let (o, c, i) = layout(x.shape())?;
        contract!(
            c == self.channels(),
            "batch norm has {} channels, input has {}",
            self.channels(),
            c
        );
        contract!(self.eps > 0.0, "batch norm eps must be positive");
        Ok((o, c, i))
    }

    /// Training-mode forward: normalizes with batch statistics and updates the
    /// running estimates with `momentum`.
    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let (outer, ch, inner) = self.check(x)?;
        let m = outer * inner;
        let xs = x.data();
        let mut y = vec![0.0; xs.len()];
        let mut xhat = vec![0.0; xs.len()];
        let mut inv_std = vec![0.0; ch];
        if m > 0 {
            for c in 0..ch {
                let mut sum = 0.0;
                for o in 0..outer {
                    let base = (o * ch + c) * inner;
                    sum += xs[base..base + inner].iter().sum::<f64>();
                }
                let mean = sum / m as f64;
                let mut sq = 0.0;
                for o in 0..outer {
                    let base = (o * ch + c) * inner;
                    sq += xs[base..base + inner]
                        .iter()
                        .map(|v| (v - mean) * (v - mean))
                        .sum::<f64>();
                }
                let var = sq / m as f64;
                let istd = 1.0 / (var + self.eps).sqrt();
                inv_std[c] = istd;
                let g = self.gamma.value.data()[c];
                let b = self.beta.value.data()[c];
                for o in 0..outer {
                    let base = (o * ch + c) * inner;
                    for k in base..base + inner {
                        let h = (xs[k] - mean) * istd;
                        xhat[k] = h;
                        y[k] = g * h + b;
                    }
                }
                let unbiased = if m > 1 { var * m as f64 / (m - 1) as f64 } else { var };
                let rm = &mut self.running_mean.data_mut()[c];
                *rm = (1.0 - self.momentum) * *rm + self.momentum * mean;
                let rv = &mut self.running_var.data_mut()[c];
                *rv = (1.0 - self.momentum) * *rv + self.momentum * unbiased;
            }
        }
        self.cache = Some(BnCache::Train { xhat, inv_std });
        Tensor::from_vec(x.shape(), y)
    }

    fn eval_impl(&self, x: &Tensor) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
        let (outer, ch, inner) = self.check(x)?;
        let xs = x.data();
        let mut y = vec![0.0; xs.len()];
        let mut xhat = vec![0.0; xs.len()];
        let inv_std: Vec<f64> = self
            .running_var
            .data()
            .iter()
            .map(|v| 1.0 / (v + self.eps).sqrt())
            .collect();
        for o in 0..outer {
            for c in 0..ch {
                let base = (o * ch + c) * inner;
                let (mu, g, b) = (
                    self.running_mean.data()[c],
                    self.gamma.value.data()[c],
                    self.beta.value.data()[c],
                );
                for k in base..base + inner {
                    xhat[k] = (xs[k] - mu) * inv_std[c];
                    y[k] = g * xhat[k] + b;
                }
            }
        }
        Ok((Tensor::from_vec(x.shape(), y)?, xhat, inv_std))
    }

    /// Eval-mode forward that keeps what backward needs (used when fine-tuning
    /// with frozen statistics).
    pub fn forward_eval(&mut self, x: &Tensor) -> Result<Tensor> {
        let (y, xhat, inv_std) = self.eval_impl(x)?;
        self.cache = Some(BnCache::Eval { xhat, inv_std });
        Ok(y)
    }

    /// Stateless eval-mode forward using the running statistics.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.eval_impl(x)?.0)
    }

    pub fn backward(&mut self, gy: &Tensor) -> Tensor {
        let (outer, ch, inner) = layout(gy.shape()).expect("shape checked in forward");
        let m = (outer * inner) as f64;
        let g = gy.data();
        let mut dx = vec![0.0; g.len()];
        match self.cache.take().expect("batch norm backward without forward") {
            BnCache::Train { xhat, inv_std } => {
                for c in 0..ch {
                    let (mut sum_g, mut sum_gx) = (0.0, 0.0);
                    for o in 0..outer {
                        let base = (o * ch + c) * inner;
                        for k in base..base + inner {
                            sum_g += g[k];
                            sum_gx += g[k] * xhat[k];
                        }
                    }
                    self.gamma.grad.data_mut()[c] += sum_gx;
                    self.beta.grad.data_mut()[c] += sum_g;
                    let scale = self.gamma.value.data()[c] * inv_std[c] / m;
                    for o in 0..outer {
                        let base = (o * ch + c) * inner;
                        for k in base..base + inner {
                            dx[k] = scale * (m * g[k] - sum_g - xhat[k] * sum_gx);
                        }
                    }
                }
            }
            BnCache::Eval { xhat, inv_std } => {
                for c in 0..ch {
                    let gam = self.gamma.value.data()[c];
                    let (mut sum_g, mut sum_gx) = (0.0, 0.0);
                    for o in 0..outer {
                        let base = (o * ch + c) * inner;
                        for k in base..base + inner {
                            dx[k] = g[k] * gam * inv_std[c];
                            sum_g += g[k];
                            sum_gx += g[k] * xhat[k];
                        }
                    }
                    self.gamma.grad.data_mut()[c] += sum_gx;
                    self.beta.grad.data_mut()[c] += sum_g;
                }
            }
        }
        Tensor::from_vec(gy.shape(), dx).expect("shape by construction")
    }
}

impl Module for BatchNorm {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        f(&join(prefix, "gamma"), Slot::Param(&mut self.gamma));
        f(&join(prefix, "beta"), Slot::Param(&mut self.beta));
        f(&join(prefix, "running_mean"), Slot::Buffer(&mut self.running_mean));
        f(&join(prefix, "running_var"), Slot::Buffer(&mut self.running_var));
    }
}
