use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::annotate::{annotate_rad, FrameLabels};
use super::geometry::RadarGeometry;
use super::scene::SceneObject;
use crate::error::{contract, Result};

/// Point-spread taps reach this many bins either side of the peak.
pub const PSF_HALF_WIDTH: i64 = 5;

/// Complex range-angle-Doppler frame, Doppler fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexRadCube {
    pub geometry: RadarGeometry,
    pub values: Vec<Complex64>,
}

impl ComplexRadCube {
    pub fn zeros(geometry: &RadarGeometry) -> Self {
        Self {
            geometry: geometry.clone(),
            values: vec![Complex64::new(0.0, 0.0); geometry.n_cells()],
        }
    }

    pub fn from_values(geometry: &RadarGeometry, values: Vec<Complex64>) -> Result<Self> {
        contract!(
            values.len() == geometry.n_cells(),
            "cube has {} values, geometry needs {}",
            values.len(),
            geometry.n_cells()
        );
        Ok(Self {
            geometry: geometry.clone(),
            values,
        })
    }

    pub fn at(&self, r: usize, a: usize, d: usize) -> Complex64 {
        self.values[self.geometry.index(r, a, d)]
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub fn add(&self, other: &ComplexRadCube) -> Result<ComplexRadCube> {
        contract!(self.geometry == other.geometry, "cube geometries differ");
        Ok(Self {
            geometry: self.geometry.clone(),
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
        })
    }
}

/// One-axis point-spread tap: a sinc with a three-bin half-power main lobe
/// under a Hann taper, cut off past [`PSF_HALF_WIDTH`].
pub fn psf_tap(offset: i64) -> f64 {
    if offset.abs() > PSF_HALF_WIDTH {
        return 0.0;
    }
    let d = offset as f64;
    let x = d / 2.5;
    let sinc = if x == 0.0 {
        1.0
    } else {
        (std::f64::consts::PI * x).sin() / (std::f64::consts::PI * x)
    };
    let hann = 0.5 * (1.0 + (std::f64::consts::PI * d / (PSF_HALF_WIDTH + 1) as f64).cos());
    sinc * hann
}

/// Noise-free sum of every scatterer's separable point-spread response.
pub fn render_signal(scene: &[SceneObject], g: &RadarGeometry) -> ComplexRadCube {
    let mut cube = ComplexRadCube::zeros(g);
    let taps: Vec<f64> = (-PSF_HALF_WIDTH..=PSF_HALF_WIDTH).map(psf_tap).collect();
    let w = PSF_HALF_WIDTH;
    let (nr, na, nd) = (g.range_bins as i64, g.angle_bins as i64, g.doppler_bins as i64);
    for obj in scene {
        for s in &obj.scatterers {
            let [r0, a0, d0] = s.cell.map(i64::from);
            for dr in -w..=w {
                let r = r0 + dr;
                if r < 0 || r >= nr {
                    continue;
                }
                for da in -w..=w {
                    let a = a0 + da;
                    if a < 0 || a >= na {
                        continue;
                    }
                    let kra = taps[(dr + w) as usize] * taps[(da + w) as usize];
                    let base = g.index(r as usize, a as usize, 0);
                    for dd in -w..=w {
                        let d = d0 + dd;
                        if d < 0 || d >= nd {
                            continue;
                        }
                        cube.values[base + d as usize] += s.amplitude * (kra * taps[(dd + w) as usize]);
                    }
                }
            }
        }
    }
    cube
}

/// Adds circular complex Gaussian noise with `E|n|^2 = noise_floor_power`.
pub fn add_noise(cube: &mut ComplexRadCube, noise_seed: u64) {
    let p = cube.geometry.noise_floor_power;
    if p == 0.0 {
        return;
    }
    let sigma = (p / 2.0).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    for v in &mut cube.values {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        *v += Complex64::new(sigma * re, sigma * im);
    }
}

pub fn render_frame(scene: &[SceneObject], g: &RadarGeometry, noise_seed: u64) -> (ComplexRadCube, FrameLabels) {
    let mut cube = render_signal(scene, g);
    add_noise(&mut cube, noise_seed);
    (cube, annotate_rad(scene, g))
}
