use super::tensor::Tensor;
use crate::error::{contract, Result};

/// Elementwise `max(0, x)`; the subgradient at 0 is 0.
#[derive(Clone, Debug, Default)]
pub struct Relu {
    mask: Vec<bool>,
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

impl Relu {
    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        self.mask = x.data().iter().map(|&v| v > 0.0).collect();
        relu(x)
    }

    pub fn backward(&mut self, gy: &Tensor) -> Tensor {
        assert_eq!(gy.len(), self.mask.len(), "relu backward shape mismatch");
        let mut g = gy.clone();
        for (v, &m) in g.data_mut().iter_mut().zip(&self.mask) {
            if !m {
                *v = 0.0;
            }
        }
        g
    }
}

#[derive(Clone, Debug, Default)]
pub struct Sigmoid {
    out: Vec<f64>,
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

pub fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl Sigmoid {
    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let y = sigmoid(x);
        self.out = y.data().to_vec();
        y
    }

    pub fn backward(&mut self, gy: &Tensor) -> Tensor {
        let mut g = gy.clone();
        for (v, &s) in g.data_mut().iter_mut().zip(&self.out) {
            *v *= s * (1.0 - s);
        }
        g
    }
}

/// Nearest-neighbour 2x upsampling of `[N, C, H, W]`.
pub fn upsample_nearest2x(x: &Tensor) -> Result<Tensor> {
    contract!(x.shape().len() == 4, "upsample expects [N,C,H,W]");
    let (n, c, h, w) = x.dims4();
    let (h2, w2) = (2 * h, 2 * w);
    let mut out = vec![0.0; n * c * h2 * w2];
    for plane in 0..n * c {
        let src = &x.data()[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * h2 * w2..(plane + 1) * h2 * w2];
        for i in 0..h2 {
            for j in 0..w2 {
                dst[i * w2 + j] = src[(i / 2) * w + j / 2];
            }
        }
    }
    Tensor::from_vec(&[n, c, h2, w2], out)
}

/// Backward of [`upsample_nearest2x`]: sums each 2x2 block of the upstream gradient.
pub fn upsample_nearest2x_backward(gy: &Tensor) -> Tensor {
    let (n, c, h2, w2) = gy.dims4();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut out = vec![0.0; n * c * h * w];
    for plane in 0..n * c {
        let src = &gy.data()[plane * h2 * w2..(plane + 1) * h2 * w2];
        let dst = &mut out[plane * h * w..(plane + 1) * h * w];
        for i in 0..h2 {
            for j in 0..w2 {
                dst[(i / 2) * w + j / 2] += src[i * w2 + j];
            }
        }
    }
    Tensor::from_vec(&[n, c, h, w], out).expect("shape by construction")
}
