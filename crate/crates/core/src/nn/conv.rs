use rand::Rng;

use super::gemm::{gemm, MatRef};
use super::module::{join, Module, Slot};
use super::tensor::{Param, Tensor};
use crate::error::{contract, Result};

/// Square-kernel 2-d cross-correlation over `[N, C, H, W]` tensors, lowered to
/// im2col + GEMM per sample.
#[derive(Clone, Debug)]
pub struct Conv2d {
    /// `[C_out, C_in, k, k]`
    pub weight: Param,
    /// `[C_out]`
    pub bias: Option<Param>,
    pub stride: usize,
    pub padding: usize,
    cache: Option<ConvCache>,
}

#[derive(Clone, Debug)]
struct ConvCache {
    cols: Vec<Vec<f64>>,
    in_shape: [usize; 4],
    out_hw: (usize, usize),
}

/// Kaiming-uniform bound for ReLU networks: `sqrt(6 / fan_in)`.
pub fn kaiming_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in.max(1) as f64).sqrt()
}

impl Conv2d {
    /// "Same" padding for odd kernels, Kaiming-uniform weights, zero bias.
    pub fn new<R: Rng>(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let bound = kaiming_bound(c_in * kernel * kernel);
        let weight = Tensor::from_fn(&[c_out, c_in, kernel, kernel], |_| {
            rng.gen_range(-bound..=bound)
        });
        Self {
            weight: Param::new(weight),
            bias: bias.then(|| Param::new(Tensor::zeros(&[c_out]))),
            stride,
            padding: (kernel - 1) / 2,
            cache: None,
        }
    }

    pub fn from_params(
        weight: Tensor,
        bias: Option<Tensor>,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        contract!(weight.shape().len() == 4, "conv weight must be 4-d");
        let s = weight.shape();
        contract!(s[2] == s[3] && s[2] % 2 == 1, "kernel must be square and odd, got {:?}", s);
        contract!(stride >= 1, "stride must be positive");
        if let Some(b) = &bias {
            contract!(b.shape() == [s[0]], "bias shape {:?} for {} outputs", b.shape(), s[0]);
        }
        Ok(Self {
            weight: Param::new(weight),
            bias: bias.map(Param::new),
            stride,
            padding,
            cache: None,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.value.shape()[2]
    }

    fn out_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let k = self.kernel();
        contract!(
            h + 2 * self.padding >= k && w + 2 * self.padding >= k,
            "input {}x{} smaller than kernel {}",
            h,
            w,
            k
        );
        Ok((
            (h + 2 * self.padding - k) / self.stride + 1,
            (w + 2 * self.padding - k) / self.stride + 1,
        ))
    }

    fn run(&self, x: &Tensor, keep_cols: bool) -> Result<(Tensor, Option<ConvCache>)> {
        contract!(x.shape().len() == 4, "conv2d input must be [N,C,H,W], got {:?}", x.shape());
        let (n, c, h, w) = x.dims4();
        contract!(
            c == self.in_channels(),
            "conv2d expects {} input channels, got {}",
            self.in_channels(),
            c
        );
        let (ho, wo) = self.out_hw(h, w)?;
        let k = self.kernel();
        let c_out = self.out_channels();
        let ck = c * k * k;
        let p = ho * wo;
        let mut out = vec![0.0; n * c_out * p];
        let mut cols_all = Vec::with_capacity(if keep_cols { n } else { 0 });
        let wmat = MatRef::new(self.weight.value.data(), c_out, ck);
        for b in 0..n {
            let xs = &x.data()[b * c * h * w..(b + 1) * c * h * w];
            let cols = im2col(xs, c, h, w, k, self.stride, self.padding, ho, wo);
            let ob = &mut out[b * c_out * p..(b + 1) * c_out * p];
            gemm(1.0, wmat, MatRef::new(&cols, ck, p), 0.0, ob);
            if let Some(bias) = &self.bias {
                for (oc, row) in ob.chunks_mut(p).enumerate() {
                    let bv = bias.value.data()[oc];
                    row.iter_mut().for_each(|v| *v += bv);
                }
            }
            if keep_cols {
                cols_all.push(cols);
            }
        }
        let cache = keep_cols.then_some(ConvCache {
            cols: cols_all,
            in_shape: [n, c, h, w],
            out_hw: (ho, wo),
        });
        Ok((Tensor::from_vec(&[n, c_out, ho, wo], out)?, cache))
    }

    /// Forward pass that records what backward needs.
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let (y, cache) = self.run(x, true)?;
        self.cache = cache;
        Ok(y)
    }

    /// Stateless forward for frozen inference.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.run(x, false)?.0)
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    pub fn backward(&mut self, gy: &Tensor) -> Tensor {
        let cache = self.cache.take().expect("conv2d backward without forward");
        let [n, c, h, w] = cache.in_shape;
        let (ho, wo) = cache.out_hw;
        let k = self.kernel();
        let c_out = self.out_channels();
        let ck = c * k * k;
        let p = ho * wo;
        assert_eq!(gy.shape(), [n, c_out, ho, wo]);
        let mut dx = vec![0.0; n * c * h * w];
        let mut dcols = vec![0.0; ck * p];
        for b in 0..n {
            let g = &gy.data()[b * c_out * p..(b + 1) * c_out * p];
            let gmat = MatRef::new(g, c_out, p);
            let cols = &cache.cols[b];
            gemm(
                1.0,
                gmat,
                MatRef::new(cols, ck, p).t(),
                1.0,
                self.weight.grad.data_mut(),
            );
            if let Some(bias) = &mut self.bias {
                for (oc, row) in g.chunks(p).enumerate() {
                    bias.grad.data_mut()[oc] += row.iter().sum::<f64>();
                }
            }
            gemm(
                1.0,
                MatRef::new(self.weight.value.data(), c_out, ck).t(),
                gmat,
                0.0,
                &mut dcols,
            );
            col2im(
                &dcols,
                &mut dx[b * c * h * w..(b + 1) * c * h * w],
                c,
                h,
                w,
                k,
                self.stride,
                self.padding,
                ho,
                wo,
            );
        }
        Tensor::from_vec(&[n, c, h, w], dx).expect("shape by construction")
    }
}

impl Module for Conv2d {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        f(&join(prefix, "weight"), Slot::Param(&mut self.weight));
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), Slot::Param(b));
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn im2col(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Vec<f64> {
    let p = ho * wo;
    let mut cols = vec![0.0; c * k * k * p];
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = &mut cols[((ch * k + ki) * k + kj) * p..][..p];
                for oh in 0..ho {
                    let ih = (oh * stride + ki) as isize - pad as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let src = &plane[ih as usize * w..(ih as usize + 1) * w];
                    let dst = &mut row[oh * wo..(oh + 1) * wo];
                    for (ow, d) in dst.iter_mut().enumerate() {
                        let iw = (ow * stride + kj) as isize - pad as isize;
                        if iw >= 0 && iw < w as isize {
                            *d = src[iw as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

#[allow(clippy::too_many_arguments)]
fn col2im(
    cols: &[f64],
    dx: &mut [f64],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) {
    let p = ho * wo;
    for ch in 0..c {
        let plane = &mut dx[ch * h * w..(ch + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = &cols[((ch * k + ki) * k + kj) * p..][..p];
                for oh in 0..ho {
                    let ih = (oh * stride + ki) as isize - pad as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[ih as usize * w..(ih as usize + 1) * w];
                    let src = &row[oh * wo..(oh + 1) * wo];
                    for (ow, s) in src.iter().enumerate() {
                        let iw = (ow * stride + kj) as isize - pad as isize;
                        if iw >= 0 && iw < w as isize {
                            dst[iw as usize] += s;
                        }
                    }
                }
            }
        }
    }
}
