//! Channel pruning driven by L1-regularized batch-norm scales.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::detector::{Backbone, ConvBn, DetectorArch, DetectorNet, Head, Heads};
use crate::error::{Error, Result};
use crate::nn::{param_count, BatchNorm, Conv2d, Module, Tensor};
use crate::sparse::{SegArch, SegNet, SiteLinear, SparseBlock, SubmanifoldConv3};

/// Keep flags per prunable layer, keyed by layer name.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PruneMasks {
    pub layers: BTreeMap<String, Vec<bool>>,
}

impl PruneMasks {
    fn get(&self, name: &str) -> Result<&[bool]> {
        self.layers
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Contract(format!("no mask for layer {name}")))
    }

    pub fn kept(&self, name: &str) -> usize {
        self.layers.get(name).map_or(0, |m| m.iter().filter(|&&k| k).count())
    }
}

/// A network whose batch-normalized layers can be thinned.
pub trait Prunable: Module + Sized {
    /// Prunable batch norms in a fixed order. Output layers that define the
    /// task contract are excluded.
    fn prunable_bns(&mut self) -> Vec<(String, &mut BatchNorm)>;

    /// Layers whose outputs are added together and must share one mask.
    fn tied_groups(&self) -> Vec<Vec<&'static str>>;

    /// A new network with pruned channels physically removed.
    fn rebuild(&self, masks: &PruneMasks) -> Result<Self>;
}

/// Sum of `|gamma|` over prunable channels.
pub fn sparsity_loss<P: Prunable>(model: &mut P) -> f64 {
    model
        .prunable_bns()
        .iter()
        .map(|(_, bn)| bn.gamma.value.data().iter().map(|g| g.abs()).sum::<f64>())
        .sum()
}

/// Adds `lambda * sign(gamma)` to every prunable gamma gradient and returns
/// the unweighted sparsity loss.
pub fn add_sparsity_grad<P: Prunable>(model: &mut P, lambda: f64) -> f64 {
    let mut total = 0.0;
    for (_, bn) in model.prunable_bns() {
        let values = bn.gamma.value.data().to_vec();
        for (g, v) in bn.gamma.grad.data_mut().iter_mut().zip(&values) {
            total += v.abs();
            if *v != 0.0 {
                *g += lambda * v.signum();
            }
        }
    }
    total
}

/// Global selection: the `fraction` of all prunable channels with the
/// smallest `|gamma|` are candidates. Tied layers drop a channel only when it
/// is a candidate in every member. A layer that would lose every channel keeps
/// its largest one; each such clamp is reported as a warning.
pub fn select_channels<P: Prunable>(model: &mut P, fraction: f64) -> Result<(PruneMasks, Vec<String>)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Config(format!("prune fraction {fraction} must lie in [0, 1)")));
    }
    let groups = model.tied_groups();
    let layers: Vec<(String, Vec<f64>)> = model
        .prunable_bns()
        .into_iter()
        .map(|(n, bn)| (n, bn.gamma.value.data().iter().map(|g| g.abs()).collect()))
        .collect();
    let mut ranked: Vec<(f64, usize, usize)> = layers
        .iter()
        .enumerate()
        .flat_map(|(li, (_, g))| g.iter().enumerate().map(move |(c, &v)| (v, li, c)))
        .collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let n_prune = (fraction * ranked.len() as f64).floor() as usize;
    let mut candidate: Vec<Vec<bool>> = layers.iter().map(|(_, g)| vec![false; g.len()]).collect();
    for &(_, li, c) in &ranked[..n_prune] {
        candidate[li][c] = true;
    }
    let index: BTreeMap<&str, usize> = layers.iter().enumerate().map(|(i, (n, _))| (n.as_str(), i)).collect();
    let mut warnings = Vec::new();
    let mut masks = PruneMasks::default();
    let mut done = vec![false; layers.len()];
    let mut units: Vec<Vec<usize>> = groups
        .iter()
        .map(|g| g.iter().map(|n| index[n]).collect())
        .collect();
    for li in 0..layers.len() {
        if !units.iter().any(|u| u.contains(&li)) {
            units.push(vec![li]);
        }
    }
    for unit in units {
        let width = layers[unit[0]].1.len();
        let mut keep: Vec<bool> = (0..width).map(|c| !unit.iter().all(|&li| candidate[li][c])).collect();
        if !keep.iter().any(|&k| k) {
            let strength = |c: usize| unit.iter().map(|&li| layers[li].1[c]).fold(0.0, f64::max);
            let best = (0..width).max_by(|&a, &b| strength(a).total_cmp(&strength(b)).then(b.cmp(&a))).unwrap_or(0);
            keep[best] = true;
            let names: Vec<&str> = unit.iter().map(|&li| layers[li].0.as_str()).collect();
            warnings.push(format!("{} would lose every channel; keeping channel {best}", names.join("+")));
        }
        for &li in &unit {
            masks.layers.insert(layers[li].0.clone(), keep.clone());
            done[li] = true;
        }
    }
    debug_assert!(done.iter().all(|&d| d));
    Ok((masks, warnings))
}

/// Zeroes gamma and beta of every pruned channel, which makes the channel
/// output exactly zero after normalization.
pub fn apply_masks_in_place<P: Prunable>(model: &mut P, masks: &PruneMasks) -> Result<()> {
    for (name, bn) in model.prunable_bns() {
        let keep = masks.get(&name)?;
        if keep.len() != bn.channels() {
            return Err(Error::Contract(format!("mask for {name} has {} entries, layer has {}", keep.len(), bn.channels())));
        }
        for (c, &k) in keep.iter().enumerate() {
            if !k {
                bn.gamma.value.data_mut()[c] = 0.0;
                bn.beta.value.data_mut()[c] = 0.0;
            }
        }
    }
    Ok(())
}

fn check_masks<P: Prunable>(model: &mut P, masks: &PruneMasks) -> Result<()> {
    let groups = model.tied_groups();
    for (name, bn) in model.prunable_bns() {
        let keep = masks.get(&name)?;
        if keep.len() != bn.channels() {
            return Err(Error::Contract(format!("mask for {name} has {} entries, layer has {}", keep.len(), bn.channels())));
        }
        if !keep.iter().any(|&k| k) {
            return Err(Error::Contract(format!("mask for {name} removes every channel")));
        }
    }
    for g in groups {
        let first = masks.get(g[0])?;
        if g.iter().any(|n| masks.layers.get(*n).map(Vec::as_slice) != Some(first)) {
            return Err(Error::Contract(format!("tied layers {} have different masks", g.join("+"))));
        }
    }
    Ok(())
}

pub fn rebuild_pruned<P: Prunable + Clone>(model: &P, masks: &PruneMasks) -> Result<P> {
    check_masks(&mut model.clone(), masks)?;
    model.rebuild(masks)
}

/// Copy of `t` keeping, along each axis with a mask, only flagged indices.
fn slice_axes(t: &Tensor, keep: &[Option<&[bool]>]) -> Tensor {
    let shape = t.shape();
    assert_eq!(shape.len(), keep.len());
    let idx: Vec<Vec<usize>> = shape
        .iter()
        .zip(keep)
        .map(|(&n, k)| match k {
            Some(m) => (0..n).filter(|&i| m[i]).collect(),
            None => (0..n).collect(),
        })
        .collect();
    let new_shape: Vec<usize> = idx.iter().map(Vec::len).collect();
    let mut strides = vec![1usize; shape.len()];
    for ax in (0..shape.len().saturating_sub(1)).rev() {
        strides[ax] = strides[ax + 1] * shape[ax + 1];
    }
    let total: usize = new_shape.iter().product();
    let mut out = Vec::with_capacity(total);
    let mut counter = vec![0usize; shape.len()];
    for _ in 0..total {
        let off: usize = counter.iter().enumerate().map(|(ax, &c)| idx[ax][c] * strides[ax]).sum();
        out.push(t.data()[off]);
        for ax in (0..shape.len()).rev() {
            counter[ax] += 1;
            if counter[ax] < new_shape[ax] {
                break;
            }
            counter[ax] = 0;
        }
    }
    Tensor::from_vec(&new_shape, out).expect("consistent shape")
}

fn slice_bn(bn: &BatchNorm, keep: &[bool]) -> BatchNorm {
    let k = Some(keep);
    let mut out = BatchNorm::new(keep.iter().filter(|&&v| v).count());
    out.gamma.value = slice_axes(&bn.gamma.value, &[k]);
    out.beta.value = slice_axes(&bn.beta.value, &[k]);
    out.running_mean = slice_axes(&bn.running_mean, &[k]);
    out.running_var = slice_axes(&bn.running_var, &[k]);
    out.eps = bn.eps;
    out.momentum = bn.momentum;
    out
}

fn slice_conv2d(conv: &Conv2d, out_keep: Option<&[bool]>, in_keep: Option<&[bool]>) -> Result<Conv2d> {
    let w = slice_axes(&conv.weight.value, &[out_keep, in_keep, None, None]);
    let b = conv.bias.as_ref().map(|b| slice_axes(&b.value, &[out_keep]));
    Conv2d::from_params(w, b, conv.stride, conv.padding)
}

fn slice_conv_bn(cb: &ConvBn, out_keep: &[bool], in_keep: Option<&[bool]>) -> Result<ConvBn> {
    Ok(ConvBn::from_parts(
        slice_conv2d(&cb.conv, Some(out_keep), in_keep)?,
        slice_bn(&cb.bn, out_keep),
        cb.has_relu(),
    ))
}

fn count(keep: &[bool]) -> usize {
    keep.iter().filter(|&&k| k).count()
}

const DET_LAYERS: [&str; 8] = [
    "backbone.b1",
    "backbone.b2",
    "backbone.b3",
    "backbone.b4",
    "backbone.up",
    "heads.heat.hidden",
    "heads.offset.hidden",
    "heads.doppler.hidden",
];

impl Prunable for DetectorNet {
    fn prunable_bns(&mut self) -> Vec<(String, &mut BatchNorm)> {
        let [b1, b2, b3, b4] = &mut self.backbone.blocks;
        let bns = [
            &mut b1.bn,
            &mut b2.bn,
            &mut b3.bn,
            &mut b4.bn,
            &mut self.backbone.up.bn,
            &mut self.heads.heat.hidden.bn,
            &mut self.heads.offset.hidden.bn,
            &mut self.heads.doppler.hidden.bn,
        ];
        DET_LAYERS.iter().map(|s| s.to_string()).zip(bns).collect()
    }

    fn tied_groups(&self) -> Vec<Vec<&'static str>> {
        vec![vec!["backbone.b3", "backbone.up"]]
    }

    fn rebuild(&self, masks: &PruneMasks) -> Result<Self> {
        let m = |i: usize| masks.get(DET_LAYERS[i]);
        let blocks = &self.backbone.blocks;
        let b1 = slice_conv_bn(&blocks[0], m(0)?, None)?;
        let b2 = slice_conv_bn(&blocks[1], m(1)?, Some(m(0)?))?;
        let b3 = slice_conv_bn(&blocks[2], m(2)?, Some(m(1)?))?;
        let b4 = slice_conv_bn(&blocks[3], m(3)?, Some(m(2)?))?;
        let up = slice_conv_bn(&self.backbone.up, m(4)?, Some(m(3)?))?;
        let feat = m(2)?;
        let head = |h: &Head, i: usize| -> Result<Head> {
            Ok(Head {
                hidden: slice_conv_bn(&h.hidden, m(i)?, Some(feat))?,
                out: slice_conv2d(&h.out, None, Some(m(i)?))?,
            })
        };
        let heads = Heads::from_parts(
            head(&self.heads.heat, 5)?,
            head(&self.heads.offset, 6)?,
            head(&self.heads.doppler, 7)?,
        );
        let arch = DetectorArch {
            encoder: [count(m(0)?), count(m(1)?), count(m(2)?), count(m(3)?)],
            head_hidden: [count(m(5)?), count(m(6)?), count(m(7)?)],
            ..self.arch.clone()
        };
        DetectorNet::from_parts(arch, self.compress.clone(), Backbone::from_parts([b1, b2, b3, b4], up), heads)
    }
}

const SEG_LAYERS: [&str; 4] = ["stem", "expand", "mid", "reduce"];

fn slice_sparse_block(b: &SparseBlock, out_keep: &[bool], in_keep: Option<&[bool]>) -> Result<SparseBlock> {
    let w = slice_axes(&b.conv.weight.value, &[None, in_keep, Some(out_keep)]);
    let bias = b.conv.bias.as_ref().map(|p| slice_axes(&p.value, &[Some(out_keep)]));
    Ok(SparseBlock::from_parts(
        SubmanifoldConv3::from_params(w, bias)?,
        slice_bn(&b.bn, out_keep),
        b.has_relu(),
    ))
}

impl Prunable for SegNet {
    fn prunable_bns(&mut self) -> Vec<(String, &mut BatchNorm)> {
        let bns = [&mut self.stem.bn, &mut self.expand.bn, &mut self.mid.bn, &mut self.reduce.bn];
        SEG_LAYERS.iter().map(|s| s.to_string()).zip(bns).collect()
    }

    fn tied_groups(&self) -> Vec<Vec<&'static str>> {
        vec![vec!["expand", "mid"], vec!["stem", "reduce"]]
    }

    fn rebuild(&self, masks: &PruneMasks) -> Result<Self> {
        let m = |i: usize| masks.get(SEG_LAYERS[i]);
        let stem = slice_sparse_block(&self.stem, m(0)?, None)?;
        let expand = slice_sparse_block(&self.expand, m(1)?, Some(m(0)?))?;
        let mid = slice_sparse_block(&self.mid, m(2)?, Some(m(1)?))?;
        let reduce = slice_sparse_block(&self.reduce, m(3)?, Some(m(2)?))?;
        let classifier = SiteLinear::from_params(
            slice_axes(&self.classifier.weight.value, &[Some(m(3)?), None]),
            self.classifier.bias.value.clone(),
        )?;
        let arch = SegArch {
            widths: [count(m(0)?), count(m(1)?), count(m(2)?), count(m(3)?)],
            ..self.arch.clone()
        };
        SegNet::from_parts(arch, [stem, expand, mid, reduce], classifier)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub name: String,
    pub kept: usize,
    pub total: usize,
}

/// Per-layer channel counts and parameter totals, optionally with the
/// before/after metric of whatever the caller evaluated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub fraction: f64,
    pub layers: Vec<LayerReport>,
    pub params_before: usize,
    pub params_after: usize,
    pub warnings: Vec<String>,
    pub metric_name: Option<String>,
    pub metric_before: Option<f64>,
    pub metric_after_prune: Option<f64>,
    pub metric_after_fine_tune: Option<f64>,
}

impl PruneReport {
    pub fn param_ratio(&self) -> f64 {
        self.params_after as f64 / self.params_before.max(1) as f64
    }
}

/// Selects and removes channels; returns the thinner network and its report.
pub fn prune<P: Prunable + Clone>(model: &P, fraction: f64) -> Result<(P, PruneReport)> {
    let mut original = model.clone();
    let (masks, warnings) = select_channels(&mut original, fraction)?;
    for w in &warnings {
        log::warn!("{w}");
    }
    let mut pruned = rebuild_pruned(model, &masks)?;
    let layers = original
        .prunable_bns()
        .iter()
        .map(|(n, bn)| LayerReport {
            name: n.clone(),
            kept: masks.kept(n),
            total: bn.channels(),
        })
        .collect();
    let report = PruneReport {
        fraction,
        layers,
        params_before: param_count(&mut original),
        params_after: param_count(&mut pruned),
        warnings,
        metric_name: None,
        metric_before: None,
        metric_after_prune: None,
        metric_after_fine_tune: None,
    };
    Ok((pruned, report))
}
