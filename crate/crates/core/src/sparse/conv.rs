use rand::Rng;

use super::grid::{KernelMap, KERNEL_VOLUME};
use crate::error::{contract, Result};
use crate::nn::conv::kaiming_bound;
use crate::nn::gemm::{gemm, MatRef};
use crate::nn::{join, Module, Param, Slot, Tensor};

/// 3x3x3 submanifold convolution: outputs live exactly on the input sites and
/// only active neighbours contribute. Lowered to gather, GEMM, scatter-add per
/// kernel offset.
#[derive(Clone, Debug)]
pub struct SubmanifoldConv3 {
    /// `[27, C_in, C_out]`
    pub weight: Param,
    /// `[C_out]`
    pub bias: Option<Param>,
    cache: Option<Tensor>,
}

fn gather(src: &[f64], width: usize, rows: impl Iterator<Item = u32>, out: &mut Vec<f64>) {
    out.clear();
    for r in rows {
        let r = r as usize;
        out.extend_from_slice(&src[r * width..(r + 1) * width]);
    }
}

fn scatter_add(dst: &mut [f64], width: usize, rows: impl Iterator<Item = u32>, src: &[f64]) {
    for (i, r) in rows.enumerate() {
        let r = r as usize;
        for (d, s) in dst[r * width..(r + 1) * width].iter_mut().zip(&src[i * width..(i + 1) * width]) {
            *d += s;
        }
    }
}

impl SubmanifoldConv3 {
    pub fn new<R: Rng>(c_in: usize, c_out: usize, bias: bool, rng: &mut R) -> Self {
        let bound = kaiming_bound(KERNEL_VOLUME * c_in);
        Self {
            weight: Param::new(Tensor::from_fn(&[KERNEL_VOLUME, c_in, c_out], |_| {
                rng.gen_range(-bound..=bound)
            })),
            bias: bias.then(|| Param::new(Tensor::zeros(&[c_out]))),
            cache: None,
        }
    }

    pub fn from_params(weight: Tensor, bias: Option<Tensor>) -> Result<Self> {
        contract!(
            weight.shape().len() == 3 && weight.shape()[0] == KERNEL_VOLUME,
            "sparse conv weight must be [27, C_in, C_out], got {:?}",
            weight.shape()
        );
        if let Some(b) = &bias {
            contract!(b.shape() == [weight.shape()[2]], "bias shape {:?}", b.shape());
        }
        Ok(Self {
            weight: Param::new(weight),
            bias: bias.map(Param::new),
            cache: None,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[2]
    }

    fn run(&self, x: &Tensor, km: &KernelMap) -> Result<Tensor> {
        let (ci, co) = (self.in_channels(), self.out_channels());
        contract!(
            x.shape().len() == 2 && x.shape()[1] == ci && x.shape()[0] == km.sites,
            "sparse conv expects [{}, {ci}], got {:?}",
            km.sites,
            x.shape()
        );
        let n = km.sites;
        let mut out = vec![0.0; n * co];
        if let Some(b) = &self.bias {
            for row in out.chunks_mut(co) {
                row.copy_from_slice(b.value.data());
            }
        }
        let w = self.weight.value.data();
        let mut buf = Vec::new();
        let mut tmp = Vec::new();
        for (k, pairs) in km.pairs.iter().enumerate() {
            if pairs.is_empty() {
                continue;
            }
            let p = pairs.len();
            gather(x.data(), ci, pairs.iter().map(|q| q.0), &mut buf);
            tmp.clear();
            tmp.resize(p * co, 0.0);
            let wk = MatRef::new(&w[k * ci * co..(k + 1) * ci * co], ci, co);
            gemm(1.0, MatRef::new(&buf, p, ci), wk, 0.0, &mut tmp);
            scatter_add(&mut out, co, pairs.iter().map(|q| q.1), &tmp);
        }
        Tensor::from_vec(&[n, co], out)
    }

    pub fn forward(&mut self, x: &Tensor, km: &KernelMap) -> Result<Tensor> {
        let y = self.run(x, km)?;
        self.cache = Some(x.clone());
        Ok(y)
    }

    pub fn infer(&self, x: &Tensor, km: &KernelMap) -> Result<Tensor> {
        self.run(x, km)
    }

    /// Accumulates weight and bias gradients; returns the input gradient.
    pub fn backward(&mut self, gy: &Tensor, km: &KernelMap) -> Tensor {
        let x = self.cache.take().expect("backward without forward");
        let (ci, co) = (self.in_channels(), self.out_channels());
        let n = km.sites;
        let mut gx = vec![0.0; n * ci];
        if let Some(b) = &mut self.bias {
            let gb = b.grad.data_mut();
            for row in gy.data().chunks(co) {
                for (g, v) in gb.iter_mut().zip(row) {
                    *g += v;
                }
            }
        }
        let w = self.weight.value.data().to_vec();
        let gw = self.weight.grad.data_mut();
        let (mut xin, mut gout, mut gin) = (Vec::new(), Vec::new(), Vec::new());
        for (k, pairs) in km.pairs.iter().enumerate() {
            if pairs.is_empty() {
                continue;
            }
            let p = pairs.len();
            gather(x.data(), ci, pairs.iter().map(|q| q.0), &mut xin);
            gather(gy.data(), co, pairs.iter().map(|q| q.1), &mut gout);
            let slot = k * ci * co..(k + 1) * ci * co;
            gemm(
                1.0,
                MatRef::new(&xin, p, ci).t(),
                MatRef::new(&gout, p, co),
                1.0,
                &mut gw[slot.clone()],
            );
            gin.clear();
            gin.resize(p * ci, 0.0);
            gemm(
                1.0,
                MatRef::new(&gout, p, co),
                MatRef::new(&w[slot], ci, co).t(),
                0.0,
                &mut gin,
            );
            scatter_add(&mut gx, ci, pairs.iter().map(|q| q.0), &gin);
        }
        Tensor::from_vec(&[n, ci], gx).expect("shape matches")
    }
}

impl Module for SubmanifoldConv3 {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        f(&join(prefix, "weight"), Slot::Param(&mut self.weight));
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), Slot::Param(b));
        }
    }
}

/// Per-site affine map `[N, C_in] -> [N, C_out]`.
#[derive(Clone, Debug)]
pub struct SiteLinear {
    /// `[C_in, C_out]`
    pub weight: Param,
    pub bias: Param,
    cache: Option<Tensor>,
}

impl SiteLinear {
    pub fn new<R: Rng>(c_in: usize, c_out: usize, rng: &mut R) -> Self {
        let bound = (1.0 / c_in.max(1) as f64).sqrt();
        Self {
            weight: Param::new(Tensor::from_fn(&[c_in, c_out], |_| rng.gen_range(-bound..=bound))),
            bias: Param::new(Tensor::zeros(&[c_out])),
            cache: None,
        }
    }

    pub fn from_params(weight: Tensor, bias: Tensor) -> Result<Self> {
        contract!(
            weight.shape().len() == 2 && bias.shape() == [weight.shape()[1]],
            "site linear weight {:?} and bias {:?} disagree",
            weight.shape(),
            bias.shape()
        );
        Ok(Self {
            weight: Param::new(weight),
            bias: Param::new(bias),
            cache: None,
        })
    }

    fn run(&self, x: &Tensor) -> Result<Tensor> {
        let (ci, co) = (self.weight.value.shape()[0], self.weight.value.shape()[1]);
        contract!(
            x.shape().len() == 2 && x.shape()[1] == ci,
            "site linear expects [N, {ci}], got {:?}",
            x.shape()
        );
        let n = x.shape()[0];
        let mut out: Vec<f64> = (0..n).flat_map(|_| self.bias.value.data().iter().copied()).collect();
        gemm(
            1.0,
            MatRef::new(x.data(), n, ci),
            MatRef::new(self.weight.value.data(), ci, co),
            1.0,
            &mut out,
        );
        Tensor::from_vec(&[n, co], out)
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = self.run(x)?;
        self.cache = Some(x.clone());
        Ok(y)
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.run(x)
    }

    pub fn backward(&mut self, gy: &Tensor) -> Tensor {
        let x = self.cache.take().expect("backward without forward");
        let (ci, co) = (self.weight.value.shape()[0], self.weight.value.shape()[1]);
        let n = x.shape()[0];
        gemm(
            1.0,
            MatRef::new(x.data(), n, ci).t(),
            MatRef::new(gy.data(), n, co),
            1.0,
            self.weight.grad.data_mut(),
        );
        let gb = self.bias.grad.data_mut();
        for row in gy.data().chunks(co) {
            for (g, v) in gb.iter_mut().zip(row) {
                *g += v;
            }
        }
        let mut gx = vec![0.0; n * ci];
        gemm(
            1.0,
            MatRef::new(gy.data(), n, co),
            MatRef::new(self.weight.value.data(), ci, co).t(),
            0.0,
            &mut gx,
        );
        Tensor::from_vec(&[n, ci], gx).expect("shape matches")
    }
}

impl Module for SiteLinear {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        f(&join(prefix, "weight"), Slot::Param(&mut self.weight));
        f(&join(prefix, "bias"), Slot::Param(&mut self.bias));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, GradCheckConfig};
    use crate::sparse::grid::{kernel_offsets, SparseGrid, CENTER_OFFSET};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Dense zero-padded 3-d correlation over an `n^3` volume with inactive
    /// voxels zeroed on input, read back only at active voxels.
    fn masked_dense(conv: &SubmanifoldConv3, grid: &SparseGrid, n: usize) -> Vec<f64> {
        let (ci, co) = (conv.in_channels(), conv.out_channels());
        let vox = |c: [i64; 3]| (c[0] * n as i64 + c[1]) * n as i64 + c[2];
        let mut dense = vec![0.0; n * n * n * ci];
        for (i, c) in grid.coords.iter().enumerate() {
            let v = vox([c[0] as i64, c[1] as i64, c[2] as i64]) as usize;
            dense[v * ci..(v + 1) * ci].copy_from_slice(&grid.features.data()[i * ci..(i + 1) * ci]);
        }
        let w = conv.weight.value.data();
        let mut out = Vec::new();
        for c in &grid.coords {
            for o in 0..co {
                let mut s = conv.bias.as_ref().map_or(0.0, |b| b.value.data()[o]);
                for (k, off) in kernel_offsets().iter().enumerate() {
                    let q = [c[0] as i64 + off[0] as i64, c[1] as i64 + off[1] as i64, c[2] as i64 + off[2] as i64];
                    if q.iter().any(|&v| v < 0 || v >= n as i64) {
                        continue;
                    }
                    let v = vox(q) as usize;
                    for i in 0..ci {
                        s += w[(k * ci + i) * co + o] * dense[v * ci + i];
                    }
                }
                out.push(s);
            }
        }
        out
    }

    fn random_grid(n: usize, density: f64, ci: usize, rng: &mut ChaCha8Rng) -> SparseGrid {
        let mut coords = Vec::new();
        for r in 0..n as u32 {
            for a in 0..n as u32 {
                for d in 0..n as u32 {
                    if rng.gen_bool(density) {
                        coords.push([r, a, d]);
                    }
                }
            }
        }
        let m = coords.len();
        let feats = Tensor::from_fn(&[m, ci], |_| rng.gen_range(-1.0..1.0));
        SparseGrid::new(vec![0; m], coords, feats).unwrap()
    }

    #[test]
    fn isolated_site_sees_only_center_tap() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut conv = SubmanifoldConv3::new(2, 3, true, &mut rng);
        conv.bias.as_mut().unwrap().value = Tensor::from_vec(&[3], vec![0.1, 0.2, 0.3]).unwrap();
        let f = Tensor::from_vec(&[1, 2], vec![0.5, -2.0]).unwrap();
        let g = SparseGrid::new(vec![0], vec![[4, 4, 4]], f).unwrap();
        let y = conv.infer(&g.features, &KernelMap::build(&g)).unwrap();
        let w = conv.weight.value.data();
        for o in 0..3 {
            let want = w[(CENTER_OFFSET * 2) * 3 + o] * 0.5 + w[(CENTER_OFFSET * 2 + 1) * 3 + o] * -2.0 + 0.1 * (o + 1) as f64;
            assert!((y.data()[o] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn dense_grid_matches_dense_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let conv = SubmanifoldConv3::new(3, 4, true, &mut rng);
        let g = random_grid(6, 1.0, 3, &mut rng);
        assert_eq!(g.len(), 216);
        let y = conv.infer(&g.features, &KernelMap::build(&g)).unwrap();
        let want = masked_dense(&conv, &g, 6);
        for (a, b) in y.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn random_patterns_match_masked_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for t in 0..50 {
            let density = [0.01, 0.05, 0.2][t % 3];
            let conv = SubmanifoldConv3::new(2, 3, t % 2 == 0, &mut rng);
            let g = random_grid(8, density, 2, &mut rng);
            let km = KernelMap::build(&g);
            assert!(km.pair_count() <= KERNEL_VOLUME * g.len());
            let y = conv.infer(&g.features, &km).unwrap();
            assert_eq!(y.shape(), [g.len(), 3]);
            let want = masked_dense(&conv, &g, 8);
            for (a, b) in y.data().iter().zip(&want) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn conv_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = random_grid(5, 0.3, 2, &mut rng);
        let km = KernelMap::build(&g);
        let mut conv = SubmanifoldConv3::new(2, 3, true, &mut rng);
        let proj = Tensor::from_fn(&[g.len(), 3], |_| rng.gen_range(-1.0..1.0));
        let report = grad_check(
            &mut conv,
            Some(g.features.clone()),
            |m, x| {
                let y = m.forward(x, &km)?;
                let loss: f64 = y.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum();
                Ok((loss, m.backward(&proj, &km)))
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    #[test]
    fn linear_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut lin = SiteLinear::new(4, 3, &mut rng);
        let x = Tensor::from_fn(&[7, 4], |_| rng.gen_range(-1.0..1.0));
        let proj = Tensor::from_fn(&[7, 3], |_| rng.gen_range(-1.0..1.0));
        let report = grad_check(
            &mut lin,
            Some(x),
            |m, x| {
                let y = m.forward(x)?;
                let loss: f64 = y.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum();
                Ok((loss, m.backward(&proj)))
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }
}
