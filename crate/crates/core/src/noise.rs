//! Noise synthesis and the generalized Anscombe transform.
//!
//! Random numbers come from ChaCha20 (`rand_chacha`), a counter-based stream
//! cipher generator, with normal deviates from `rand_distr`'s ziggurat
//! sampler. A seed therefore reproduces the same noise on every platform.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// Identifier of the random stream used for noise, recorded in reports.
pub const NOISE_RNG: &str = "chacha20+ziggurat/v1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    Gaussian { sigma: f64 },
    PoissonGaussian { a: f64, b: f64 },
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseModel::Gaussian { sigma } if !(sigma > 0.0) => {
                Err(Error::Config("sigma must be positive".into()))
            }
            NoiseModel::PoissonGaussian { a, b } if !(a >= 0.0 && b >= 0.0) || (a == 0.0 && b == 0.0) => {
                Err(Error::Config(format!(
                    "Poisson-Gaussian parameters need a >= 0, b >= 0 and one of them positive (got a={a}, b={b})"
                )))
            }
            _ => Ok(()),
        }
    }

    /// Draws one noisy realization of `x`.
    pub fn corrupt(&self, x: &Image, seed: u64) -> Result<Image> {
        self.validate()?;
        match *self {
            NoiseModel::Gaussian { sigma } => add_awgn(x, sigma, seed),
            NoiseModel::PoissonGaussian { a, b } => add_poisson_gaussian(x, a, b, seed),
        }
    }
}

/// `{"a": float, "b": float}` sidecar describing heteroscedastic noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub a: f64,
    pub b: f64,
}

impl NoiseParams {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Read {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

fn rng_for(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// `y = x + w` with `w` i.i.d. `N(0, σ²)`; no clamping.
pub fn add_awgn(x: &Image, sigma: f64, seed: u64) -> Result<Image> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Config("sigma must be positive".into()));
    }
    let mut rng = rng_for(seed);
    let mut y = x.clone();
    for v in y.data_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v += sigma * z;
    }
    Ok(y)
}

/// Heteroscedastic Gaussian approximation of Poisson-Gaussian noise:
/// `y ~ N(x, diag(a x + b))`, with negative variances treated as zero.
pub fn add_poisson_gaussian(x: &Image, a: f64, b: f64, seed: u64) -> Result<Image> {
    NoiseModel::PoissonGaussian { a, b }.validate()?;
    let mut rng = rng_for(seed);
    let mut y = x.clone();
    for v in y.data_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        let var = (a * *v + b).max(0.0);
        *v += var.sqrt() * z;
    }
    Ok(y)
}

fn check_gain(a: f64) -> Result<()> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::Config(format!(
            "the Anscombe transform needs a > 0 (got {a}); pure Gaussian noise needs no stabilization"
        )));
    }
    Ok(())
}

#[inline]
fn gat_scalar(v: f64, a: f64, b: f64) -> f64 {
    let radicand = a * v + 0.375 * a * a + b;
    if radicand <= 0.0 {
        0.0
    } else {
        (2.0 / a) * radicand.sqrt()
    }
}

#[inline]
fn gat_inverse_scalar(u: f64, a: f64, b: f64) -> f64 {
    0.25 * a * u * u - 0.375 * a - b / a
}

/// `f(v) = (2/a) √(a v + 3a²/8 + b)`, with negative radicands mapped to 0.
pub fn gat_forward(y: &Image, a: f64, b: f64) -> Result<Image> {
    check_gain(a)?;
    Ok(y.map(|v| gat_scalar(v, a, b)))
}

/// Algebraic inverse `v = (a/4) u² − 3a/8 − b/a`.
pub fn gat_inverse(u: &Image, a: f64, b: f64) -> Result<Image> {
    check_gain(a)?;
    Ok(u.map(|v| gat_inverse_scalar(v, a, b)))
}

/// Affine map that brings the stabilized range of `[0, 255]` intensities back
/// onto `[0, 255]`, so a unit noise level becomes `scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VstScaling {
    pub a: f64,
    pub b: f64,
    pub offset: f64,
    pub scale: f64,
}

impl VstScaling {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        check_gain(a)?;
        let lo = gat_scalar(0.0, a, b);
        let hi = gat_scalar(255.0, a, b);
        Ok(Self {
            a,
            b,
            offset: lo,
            scale: 255.0 / (hi - lo),
        })
    }

    /// Noise level seen by the Gaussian denoiser in rescaled units.
    pub fn sigma(&self) -> f64 {
        self.scale
    }

    pub fn forward(&self, y: &Image) -> Result<Image> {
        let u = gat_forward(y, self.a, self.b)?;
        Ok(u.map(|v| (v - self.offset) * self.scale))
    }

    pub fn inverse(&self, u: &Image) -> Result<Image> {
        let back = u.map(|v| v / self.scale + self.offset);
        gat_inverse(&back, self.a, self.b)
    }
}

/// Stabilizes `y`, runs a Gaussian denoiser at the stabilized noise level and
/// maps the result back.
pub fn denoise_with_vst<F>(y: &Image, a: f64, b: f64, denoise: F) -> Result<(Image, VstScaling)>
where
    F: FnOnce(&Image, f64) -> Result<Image>,
{
    let vst = VstScaling::new(a, b)?;
    let u = vst.forward(y)?;
    let den = denoise(&u, vst.sigma())?;
    Ok((vst.inverse(&den)?, vst))
}
