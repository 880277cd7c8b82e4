use crate::error::{contract, Result};
use crate::nn::{Conv2d, Tensor};
use crate::sim::{ComplexRadCube, RadarGeometry};

/// Log-magnitude cube `10 log10(|I|^2 + 1)`, same layout as the complex cube.
#[derive(Clone, Debug, PartialEq)]
pub struct LogCube {
    pub geometry: RadarGeometry,
    pub values: Vec<f64>,
}

impl LogCube {
    pub fn at(&self, r: usize, a: usize, d: usize) -> f64 {
        self.values[self.geometry.index(r, a, d)]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Doppler-as-channel map `[D, R, A]`, the layout the detector consumes.
    pub fn to_channels(&self) -> Vec<f64> {
        let g = &self.geometry;
        let (nr, na, nd) = (g.range_bins, g.angle_bins, g.doppler_bins);
        let mut out = vec![0.0; self.values.len()];
        for r in 0..nr {
            for a in 0..na {
                let src = &self.values[g.index(r, a, 0)..g.index(r, a, 0) + nd];
                for (d, &v) in src.iter().enumerate() {
                    out[(d * nr + r) * na + a] = v;
                }
            }
        }
        out
    }
}

pub fn log_magnitude(v: num_complex::Complex64) -> f64 {
    10.0 * (v.norm_sqr() + 1.0).log10()
}

pub fn log_transform(cube: &ComplexRadCube) -> LogCube {
    LogCube {
        geometry: cube.geometry.clone(),
        values: cube.values.iter().map(|&v| log_magnitude(v)).collect(),
    }
}

/// Per-pixel Cartesian coordinates `[2, R, A]` of the bin centers, divided by
/// the maximum range.
pub fn coordinate_channels(g: &RadarGeometry) -> Tensor {
    let (nr, na) = (g.range_bins, g.angle_bins);
    let mut data = vec![0.0; 2 * nr * na];
    for r in 0..nr {
        for a in 0..na {
            let (x, y) = g.fractional_to_cartesian(r as f64, a as f64);
            data[r * na + a] = x / g.max_range;
            data[nr * na + r * na + a] = y / g.max_range;
        }
    }
    Tensor::from_vec(&[2, nr, na], data).expect("shape by construction")
}

/// Stacks frames into a `[N, D, R, A]` batch.
pub fn batch_channels(frames: &[&[f64]], g: &RadarGeometry) -> Result<Tensor> {
    let per = g.n_cells();
    let mut data = Vec::with_capacity(frames.len() * per);
    for f in frames {
        contract!(f.len() == per, "frame has {} values, geometry needs {per}", f.len());
        data.extend_from_slice(f);
    }
    Tensor::from_vec(
        &[frames.len(), g.doppler_bins, g.range_bins, g.angle_bins],
        data,
    )
}

/// Appends the two coordinate channels to every sample of `[N, C, R, A]`.
pub fn append_coordinates(x: &Tensor, coords: &Tensor) -> Result<Tensor> {
    let (n, _, h, w) = x.dims4();
    contract!(
        coords.shape() == [2, h, w],
        "coordinate map {:?} does not match {h}x{w}",
        coords.shape()
    );
    let mut rep = Vec::with_capacity(n * 2 * h * w);
    for _ in 0..n {
        rep.extend_from_slice(coords.data());
    }
    let coords = Tensor::from_vec(&[n, 2, h, w], rep)?;
    Tensor::concat_channels(&[x, &coords])
}

/// Compressed Doppler features plus coordinates, `[5, R, A]` for one frame.
pub fn prepare_input(log_cube: &LogCube, compress: &Conv2d) -> Result<Tensor> {
    let g = &log_cube.geometry;
    contract!(
        compress.in_channels() == g.doppler_bins && compress.kernel() == 1,
        "compression expects a 1x1 conv over {} Doppler bins, got {:?}",
        g.doppler_bins,
        compress.weight.value.shape()
    );
    let chans = log_cube.to_channels();
    let x = batch_channels(&[&chans], g)?;
    let c = compress.infer(&x)?;
    let out = append_coordinates(&c, &coordinate_channels(g))?;
    let (_, ch, h, w) = out.dims4();
    out.reshape(&[ch, h, w])
}
