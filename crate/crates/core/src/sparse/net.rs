use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::conv::{SiteLinear, SubmanifoldConv3};
use super::grid::{voxelize, KernelMap, SparseGrid, FEATURES};
use crate::error::{contract, Error, Result};
use crate::eval::CellPrediction;
use crate::nn::{join, BatchNorm, Checkpoint, Module, Relu, Slot, Tensor};
use crate::roi::SparsePointSet;
use crate::sim::NUM_CLASSES;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegArch {
    pub in_features: usize,
    /// Stem, then three residual-stage widths; the last must equal the stem.
    pub widths: [usize; 4],
    pub classes: usize,
}

impl Default for SegArch {
    fn default() -> Self {
        Self {
            in_features: FEATURES,
            widths: [16, 32, 32, 16],
            classes: NUM_CLASSES,
        }
    }
}

impl SegArch {
    pub fn validate(&self) -> Result<()> {
        let [w0, w1, w2, w3] = self.widths;
        if self.widths.contains(&0) || self.in_features == 0 || self.classes == 0 {
            return Err(Error::Config("segmenter widths must be positive".into()));
        }
        if w1 != w2 || w3 != w0 {
            return Err(Error::Config(format!(
                "residual links need widths[1] == widths[2] and widths[3] == widths[0], got {:?}",
                self.widths
            )));
        }
        Ok(())
    }
}

/// Submanifold conv, batch norm over sites, optional ReLU.
#[derive(Clone, Debug)]
pub struct SparseBlock {
    pub conv: SubmanifoldConv3,
    pub bn: BatchNorm,
    relu: Option<Relu>,
}

impl SparseBlock {
    pub fn from_parts(conv: SubmanifoldConv3, bn: BatchNorm, relu: bool) -> Self {
        Self {
            conv,
            bn,
            relu: relu.then(Relu::default),
        }
    }

    pub fn has_relu(&self) -> bool {
        self.relu.is_some()
    }

    fn new(c_in: usize, c_out: usize, relu: bool, rng: &mut ChaCha8Rng) -> Self {
        Self {
            conv: SubmanifoldConv3::new(c_in, c_out, false, rng),
            bn: BatchNorm::new(c_out),
            relu: relu.then(Relu::default),
        }
    }

    fn forward(&mut self, x: &Tensor, km: &KernelMap, train: bool) -> Result<Tensor> {
        let h = self.conv.forward(x, km)?;
        let h = if train { self.bn.forward_train(&h)? } else { self.bn.forward_eval(&h)? };
        Ok(match &mut self.relu {
            Some(r) => r.forward(&h),
            None => h,
        })
    }

    fn infer(&self, x: &Tensor, km: &KernelMap) -> Result<Tensor> {
        let h = self.bn.infer(&self.conv.infer(x, km)?)?;
        Ok(match self.relu {
            Some(_) => crate::nn::relu(&h),
            None => h,
        })
    }

    fn backward(&mut self, gy: &Tensor, km: &KernelMap) -> Tensor {
        let g = match &mut self.relu {
            Some(r) => r.backward(gy),
            None => gy.clone(),
        };
        let g = self.bn.backward(&g);
        self.conv.backward(&g, km)
    }
}

impl Module for SparseBlock {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        self.conv.visit(&join(prefix, "conv"), f);
        self.bn.visit(&join(prefix, "bn"), f);
    }
}

/// Stem, an expanding block, two residual blocks and a site-wise classifier.
#[derive(Clone, Debug)]
pub struct SegNet {
    pub arch: SegArch,
    pub stem: SparseBlock,
    pub expand: SparseBlock,
    pub mid: SparseBlock,
    pub reduce: SparseBlock,
    pub classifier: SiteLinear,
    join_mid: Relu,
    join_reduce: Relu,
    km: Option<KernelMap>,
}

impl SegNet {
    pub fn new(arch: &SegArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [w0, w1, w2, w3] = arch.widths;
        Ok(Self {
            arch: arch.clone(),
            stem: SparseBlock::new(arch.in_features, w0, true, &mut rng),
            expand: SparseBlock::new(w0, w1, true, &mut rng),
            mid: SparseBlock::new(w1, w2, false, &mut rng),
            reduce: SparseBlock::new(w2, w3, false, &mut rng),
            classifier: SiteLinear::new(w3, arch.classes, &mut rng),
            join_mid: Relu::default(),
            join_reduce: Relu::default(),
            km: None,
        })
    }

    pub fn from_parts(
        arch: SegArch,
        blocks: [SparseBlock; 4],
        classifier: SiteLinear,
    ) -> Result<Self> {
        arch.validate()?;
        let [stem, expand, mid, reduce] = blocks;
        Ok(Self {
            arch,
            stem,
            expand,
            mid,
            reduce,
            classifier,
            join_mid: Relu::default(),
            join_reduce: Relu::default(),
            km: None,
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let arch: SegArch = ck.architecture()?;
        let mut net = Self::new(&arch, 0)?;
        ck.apply_to(&mut net)?;
        Ok(net)
    }

    pub fn checkpoint(&mut self, meta: serde_json::Value) -> Checkpoint {
        let arch = self.arch.clone();
        Checkpoint::new(&arch, meta, crate::nn::named_tensors(self))
    }

    fn check(&self, grid: &SparseGrid) -> Result<()> {
        contract!(
            grid.channels() == self.arch.in_features,
            "segmenter expects {} features per site, got {}",
            self.arch.in_features,
            grid.channels()
        );
        Ok(())
    }

    /// Differentiable forward; returns `[N, classes]` logits.
    pub fn forward(&mut self, grid: &SparseGrid, train: bool) -> Result<Tensor> {
        self.check(grid)?;
        let km = KernelMap::build(grid);
        let h0 = self.stem.forward(&grid.features, &km, train)?;
        let h1 = self.expand.forward(&h0, &km, train)?;
        let t2 = self.mid.forward(&h1, &km, train)?;
        let h2 = self.join_mid.forward(&t2.add(&h1)?);
        let t3 = self.reduce.forward(&h2, &km, train)?;
        let h3 = self.join_reduce.forward(&t3.add(&h0)?);
        let logits = self.classifier.forward(&h3)?;
        self.km = Some(km);
        Ok(logits)
    }

    pub fn infer(&self, grid: &SparseGrid) -> Result<Tensor> {
        self.check(grid)?;
        let km = KernelMap::build(grid);
        let h0 = self.stem.infer(&grid.features, &km)?;
        let h1 = self.expand.infer(&h0, &km)?;
        let h2 = crate::nn::relu(&self.mid.infer(&h1, &km)?.add(&h1)?);
        let h3 = crate::nn::relu(&self.reduce.infer(&h2, &km)?.add(&h0)?);
        self.classifier.infer(&h3)
    }

    /// Returns the gradient with respect to the site features.
    pub fn backward(&mut self, g_logits: &Tensor) -> Tensor {
        let km = self.km.take().expect("backward without forward");
        let g3 = self.join_reduce.backward(&self.classifier.backward(g_logits));
        let g2 = self.join_mid.backward(&self.reduce.backward(&g3, &km));
        let mut g1 = self.mid.backward(&g2, &km);
        g1.add_assign(&g2);
        let mut g0 = self.expand.backward(&g1, &km);
        g0.add_assign(&g3);
        self.stem.backward(&g0, &km)
    }

    /// Per-point class probabilities for one frame's point cloud.
    pub fn predict(&self, set: &SparsePointSet) -> Result<Vec<CellPrediction>> {
        let grid = voxelize(set)?;
        let logits = self.infer(&grid)?;
        Ok(set
            .points
            .iter()
            .zip(logits.data().chunks(self.arch.classes))
            .map(|(p, row)| {
                let probs = softmax(row);
                let mut out = [0.0; NUM_CLASSES];
                out.iter_mut().zip(&probs).for_each(|(o, v)| *o = *v);
                CellPrediction { cell: p.cell, probs: out }
            })
            .collect())
    }
}

impl Module for SegNet {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        self.stem.visit(&join(prefix, "stem"), f);
        self.expand.visit(&join(prefix, "expand"), f);
        self.mid.visit(&join(prefix, "mid"), f);
        self.reduce.visit(&join(prefix, "reduce"), f);
        self.classifier.visit(&join(prefix, "classifier"), f);
    }
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Inverse-frequency weights over the classes that occur; absent classes get 0.
pub fn class_weights(labels: &[u8], classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; classes];
    for &l in labels {
        counts[l as usize] += 1;
    }
    let present = counts.iter().filter(|&&c| c > 0).count().max(1);
    counts
        .iter()
        .map(|&c| if c == 0 { 0.0 } else { labels.len() as f64 / (present * c) as f64 })
        .collect()
}

/// Softmax cross-entropy averaged over points, each point weighted by its
/// class weight (normalized by the total weight). Returns loss and logit
/// gradient.
pub fn seg_loss(logits: &Tensor, labels: &[u8], weights: Option<&[f64]>) -> Result<(f64, Tensor)> {
    contract!(logits.shape().len() == 2, "logits must be [N, K], got {:?}", logits.shape());
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    contract!(labels.len() == n, "{} labels for {n} points", labels.len());
    contract!(labels.iter().all(|&l| (l as usize) < k), "label out of range for {k} classes");
    let mut grad = vec![0.0; n * k];
    let w = |l: u8| weights.map_or(1.0, |w| w[l as usize]);
    let total: f64 = labels.iter().map(|&l| w(l)).sum();
    if n == 0 || total <= 0.0 {
        return Ok((0.0, Tensor::from_vec(&[n, k], grad)?));
    }
    let mut loss = 0.0;
    for (i, (row, &y)) in logits.data().chunks(k).zip(labels).enumerate() {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        let wi = w(y) / total;
        loss += wi * (lse - row[y as usize]);
        for c in 0..k {
            let p = (row[c] - lse).exp();
            grad[i * k + c] = wi * (p - (c == y as usize) as u8 as f64);
        }
    }
    Ok((loss, Tensor::from_vec(&[n, k], grad)?))
}
