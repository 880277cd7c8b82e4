use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::input::{append_coordinates, coordinate_channels};
use super::loss::DetLossGrads;
use crate::error::{contract, Result};
use crate::nn::{
    join, upsample_nearest2x, upsample_nearest2x_backward, BatchNorm, Checkpoint, Conv2d, Module, Relu,
    Sigmoid, Slot, Tensor,
};
use crate::sim::RadarGeometry;

/// Output stride of the backbone (three stride-2 encoder blocks, one 2x
/// decoder upsample).
pub const OUTPUT_STRIDE: usize = 4;
/// Initial heatmap logit, a prior probability of about 0.1.
pub const HEAT_PRIOR_LOGIT: f64 = -2.19;

/// Everything needed to rebuild a detector, including pruned widths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorArch {
    pub geometry: RadarGeometry,
    pub compressed_doppler: usize,
    /// Encoder block widths; the third is shared with the decoder output
    /// through the skip connection.
    pub encoder: [usize; 4],
    /// Hidden widths of the heatmap, offset and Doppler heads.
    pub head_hidden: [usize; 3],
}

impl DetectorArch {
    pub fn new(geometry: &RadarGeometry) -> Self {
        Self {
            geometry: geometry.clone(),
            compressed_doppler: 3,
            encoder: [16, 32, 64, 64],
            head_hidden: [64, 64, 64],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        let g = &self.geometry;
        if !g.range_bins.is_multiple_of(8) || !g.angle_bins.is_multiple_of(8) {
            return Err(crate::Error::Config(format!(
                "detector needs range and angle bins divisible by 8, got {}x{}",
                g.range_bins, g.angle_bins
            )));
        }
        if self.compressed_doppler == 0
            || self.encoder.contains(&0)
            || self.head_hidden.contains(&0)
        {
            return Err(crate::Error::Config("detector widths must be positive".into()));
        }
        Ok(())
    }

    pub fn output_hw(&self) -> (usize, usize) {
        (
            self.geometry.range_bins / OUTPUT_STRIDE,
            self.geometry.angle_bins / OUTPUT_STRIDE,
        )
    }
}

/// Bias-free convolution, batch norm, optional ReLU.
#[derive(Clone, Debug)]
pub struct ConvBn {
    pub conv: Conv2d,
    pub bn: BatchNorm,
    relu: Option<Relu>,
}

impl ConvBn {
    pub fn new(c_in: usize, c_out: usize, kernel: usize, stride: usize, relu: bool, rng: &mut ChaCha8Rng) -> Self {
        Self {
            conv: Conv2d::new(c_in, c_out, kernel, stride, false, rng),
            bn: BatchNorm::new(c_out),
            relu: relu.then(Relu::default),
        }
    }

    pub fn from_parts(conv: Conv2d, bn: BatchNorm, relu: bool) -> Self {
        Self {
            conv,
            bn,
            relu: relu.then(Relu::default),
        }
    }

    pub fn has_relu(&self) -> bool {
        self.relu.is_some()
    }

    /// `train` normalizes with batch statistics; otherwise running statistics
    /// are used but the pass stays differentiable.
    pub fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        let y = self.conv.forward(x)?;
        let y = if train {
            self.bn.forward_train(&y)?
        } else {
            self.bn.forward_eval(&y)?
        };
        Ok(match &mut self.relu {
            Some(r) => r.forward(&y),
            None => y,
        })
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let y = self.bn.infer(&self.conv.infer(x)?)?;
        Ok(if self.relu.is_some() {
            crate::nn::relu(&y)
        } else {
            y
        })
    }

    pub fn backward(&mut self, gy: &Tensor) -> Tensor {
        let g = match &mut self.relu {
            Some(r) => r.backward(gy),
            None => gy.clone(),
        };
        let g = self.bn.backward(&g);
        self.conv.backward(&g)
    }
}

impl Module for ConvBn {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        self.conv.visit(&join(prefix, "conv"), f);
        self.bn.visit(&join(prefix, "bn"), f);
    }
}

/// Four-block encoder with one upsampling decoder block joined to the third
/// encoder block by addition.
#[derive(Clone, Debug)]
pub struct Backbone {
    pub blocks: [ConvBn; 4],
    pub up: ConvBn,
    join_relu: Relu,
}

impl Backbone {
    pub fn new(in_channels: usize, widths: [usize; 4], rng: &mut ChaCha8Rng) -> Self {
        let strides = [1, 2, 2, 2];
        let mut c_in = in_channels;
        let blocks = std::array::from_fn(|i| {
            let b = ConvBn::new(c_in, widths[i], 3, strides[i], true, rng);
            c_in = widths[i];
            b
        });
        Self {
            blocks,
            up: ConvBn::new(widths[3], widths[2], 3, 1, false, rng),
            join_relu: Relu::default(),
        }
    }

    pub fn from_parts(blocks: [ConvBn; 4], up: ConvBn) -> Self {
        Self {
            blocks,
            up,
            join_relu: Relu::default(),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.up.conv.out_channels()
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        let h1 = self.blocks[0].forward(x, train)?;
        let h2 = self.blocks[1].forward(&h1, train)?;
        let h3 = self.blocks[2].forward(&h2, train)?;
        let h4 = self.blocks[3].forward(&h3, train)?;
        let u = self.up.forward(&upsample_nearest2x(&h4)?, train)?;
        Ok(self.join_relu.forward(&u.add(&h3)?))
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let h1 = self.blocks[0].infer(x)?;
        let h2 = self.blocks[1].infer(&h1)?;
        let h3 = self.blocks[2].infer(&h2)?;
        let h4 = self.blocks[3].infer(&h3)?;
        let u = self.up.infer(&upsample_nearest2x(&h4)?)?;
        Ok(crate::nn::relu(&u.add(&h3)?))
    }

    pub fn backward(&mut self, gy: &Tensor) -> Tensor {
        let g_sum = self.join_relu.backward(gy);
        let g_up_in = self.up.backward(&g_sum);
        let g_h4 = upsample_nearest2x_backward(&g_up_in);
        let mut g_h3 = self.blocks[3].backward(&g_h4);
        g_h3.add_assign(&g_sum);
        let g_h2 = self.blocks[2].backward(&g_h3);
        let g_h1 = self.blocks[1].backward(&g_h2);
        self.blocks[0].backward(&g_h1)
    }
}

impl Module for Backbone {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit(&join(prefix, &format!("b{}", i + 1)), f);
        }
        self.up.visit(&join(prefix, "up"), f);
    }
}

/// 3x3 conv-BN-ReLU followed by a 1x1 projection.
#[derive(Clone, Debug)]
pub struct Head {
    pub hidden: ConvBn,
    pub out: Conv2d,
}

impl Head {
    pub fn new(c_in: usize, hidden: usize, c_out: usize, bias_init: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut out = Conv2d::new(hidden, c_out, 1, 1, true, rng);
        if let Some(b) = &mut out.bias {
            b.value.fill(bias_init);
        }
        Self {
            hidden: ConvBn::new(c_in, hidden, 3, 1, true, rng),
            out,
        }
    }

    fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        let h = self.hidden.forward(x, train)?;
        self.out.forward(&h)
    }

    fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.out.infer(&self.hidden.infer(x)?)
    }

    fn backward(&mut self, gy: &Tensor) -> Tensor {
        let g = self.out.backward(gy);
        self.hidden.backward(&g)
    }
}

impl Module for Head {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        self.hidden.visit(&join(prefix, "hidden"), f);
        self.out.visit(&join(prefix, "out"), f);
    }
}

/// Heatmap probabilities `[N,1,h,w]`, offsets `[N,2,h,w]` and Doppler
/// `[N,1,h,w]`.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadOutputs {
    pub heat: Tensor,
    pub offset: Tensor,
    pub doppler: Tensor,
}

#[derive(Clone, Debug)]
pub struct Heads {
    pub heat: Head,
    pub offset: Head,
    pub doppler: Head,
    sigmoid: Sigmoid,
}

impl Heads {
    pub fn new(c_in: usize, hidden: [usize; 3], doppler_bins: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            heat: Head::new(c_in, hidden[0], 1, HEAT_PRIOR_LOGIT, rng),
            offset: Head::new(c_in, hidden[1], 2, 0.0, rng),
            doppler: Head::new(c_in, hidden[2], 1, doppler_bins as f64 / 2.0, rng),
            sigmoid: Sigmoid::default(),
        }
    }

    pub fn from_parts(heat: Head, offset: Head, doppler: Head) -> Self {
        Self {
            heat,
            offset,
            doppler,
            sigmoid: Sigmoid::default(),
        }
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Result<HeadOutputs> {
        let logits = self.heat.forward(x, train)?;
        Ok(HeadOutputs {
            heat: self.sigmoid.forward(&logits),
            offset: self.offset.forward(x, train)?,
            doppler: self.doppler.forward(x, train)?,
        })
    }

    pub fn infer(&self, x: &Tensor) -> Result<HeadOutputs> {
        Ok(HeadOutputs {
            heat: crate::nn::sigmoid(&self.heat.infer(x)?),
            offset: self.offset.infer(x)?,
            doppler: self.doppler.infer(x)?,
        })
    }

    /// Takes gradients with respect to the three outputs (heatmap gradient
    /// with respect to probabilities) and returns the feature gradient.
    pub fn backward(&mut self, g_heat: &Tensor, g_offset: &Tensor, g_doppler: &Tensor) -> Tensor {
        let gl = self.sigmoid.backward(g_heat);
        let mut gx = self.heat.backward(&gl);
        gx.add_assign(&self.offset.backward(g_offset));
        gx.add_assign(&self.doppler.backward(g_doppler));
        gx
    }
}

impl Module for Heads {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        self.heat.visit(&join(prefix, "heat"), f);
        self.offset.visit(&join(prefix, "offset"), f);
        self.doppler.visit(&join(prefix, "doppler"), f);
    }
}

/// Center-point detector over Doppler-compressed range-angle maps.
#[derive(Clone, Debug)]
pub struct DetectorNet {
    pub arch: DetectorArch,
    pub compress: Conv2d,
    pub backbone: Backbone,
    pub heads: Heads,
    coords: Tensor,
}

impl DetectorNet {
    pub fn new(arch: &DetectorArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = &arch.geometry;
        let compress = Conv2d::new(g.doppler_bins, arch.compressed_doppler, 1, 1, true, &mut rng);
        let backbone = Backbone::new(arch.compressed_doppler + 2, arch.encoder, &mut rng);
        let heads = Heads::new(arch.encoder[2], arch.head_hidden, g.doppler_bins, &mut rng);
        Ok(Self {
            arch: arch.clone(),
            compress,
            backbone,
            heads,
            coords: coordinate_channels(g),
        })
    }

    pub fn from_parts(arch: DetectorArch, compress: Conv2d, backbone: Backbone, heads: Heads) -> Result<Self> {
        arch.validate()?;
        let coords = coordinate_channels(&arch.geometry);
        Ok(Self {
            arch,
            compress,
            backbone,
            heads,
            coords,
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let arch: DetectorArch = ck.architecture()?;
        let mut net = Self::new(&arch, 0)?;
        ck.apply_to(&mut net)?;
        Ok(net)
    }

    pub fn checkpoint(&mut self, meta: serde_json::Value) -> Checkpoint {
        let arch = self.arch.clone();
        Checkpoint::new(&arch, meta, crate::nn::named_tensors(self))
    }

    pub fn geometry(&self) -> &RadarGeometry {
        &self.arch.geometry
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let g = &self.arch.geometry;
        contract!(
            x.shape().len() == 4 && x.shape()[1..] == [g.doppler_bins, g.range_bins, g.angle_bins],
            "detector expects [N, {}, {}, {}], got {:?}",
            g.doppler_bins,
            g.range_bins,
            g.angle_bins,
            x.shape()
        );
        Ok(())
    }

    /// Differentiable forward over a `[N, D, R, A]` log-cube batch.
    pub fn forward(&mut self, x: &Tensor, train: bool) -> Result<HeadOutputs> {
        self.check_input(x)?;
        let c = self.compress.forward(x)?;
        let z = append_coordinates(&c, &self.coords)?;
        let feat = self.backbone.forward(&z, train)?;
        self.heads.forward(&feat, train)
    }

    pub fn infer(&self, x: &Tensor) -> Result<HeadOutputs> {
        self.check_input(x)?;
        let c = self.compress.infer(x)?;
        let z = append_coordinates(&c, &self.coords)?;
        let feat = self.backbone.infer(&z)?;
        self.heads.infer(&feat)
    }

    pub fn backward(&mut self, out: &HeadOutputs, grads: &DetLossGrads) -> Result<()> {
        let g_heat = Tensor::from_vec(out.heat.shape(), grads.heat.clone())?;
        let g_off = Tensor::from_vec(out.offset.shape(), grads.offset.clone())?;
        let g_dop = Tensor::from_vec(out.doppler.shape(), grads.doppler.clone())?;
        let g_feat = self.heads.backward(&g_heat, &g_off, &g_dop);
        let g_in = self.backbone.backward(&g_feat);
        let k = self.arch.compressed_doppler;
        let parts = g_in.split_channels(&[k, 2]);
        self.compress.backward(&parts[0]);
        Ok(())
    }
}

impl Module for DetectorNet {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        self.compress.visit(&join(prefix, "compress"), f);
        self.backbone.visit(&join(prefix, "backbone"), f);
        self.heads.visit(&join(prefix, "heads"), f);
    }
}
