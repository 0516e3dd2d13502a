//! PSNR and the Monte Carlo bias-variance decomposition of an estimator.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::noise::add_awgn;

/// Returned by [`psnr`] for identical images.
pub const PSNR_IDENTICAL: f64 = f64::INFINITY;

pub fn mse(x: &Image, est: &Image) -> Result<f64> {
    x.check_shape(est)?;
    let sum: f64 = x
        .data()
        .iter()
        .zip(est.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / x.len() as f64)
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        PSNR_IDENTICAL
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

/// PSNR in dB for the usual peak of 255.
pub fn psnr(x: &Image, est: &Image) -> Result<f64> {
    psnr_with_peak(x, est, 255.0)
}

pub fn psnr_with_peak(x: &Image, est: &Image, peak: f64) -> Result<f64> {
    Ok(psnr_from_mse(mse(x, est)?, peak))
}

/// Per-pixel averaged Monte Carlo decomposition `MSE ≈ bias² + variance`.
///
/// `variance` uses the unbiased `trials − 1` divisor, so the sample identity is
/// `mse = squared_bias + variance − correction` with `correction = variance / trials`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BiasVarianceResult {
    pub mse: f64,
    pub squared_bias: f64,
    pub variance: f64,
    pub correction: f64,
    pub trials: usize,
}

impl BiasVarianceResult {
    /// `|mse − (bias² + variance)|`.
    pub fn identity_gap(&self) -> f64 {
        (self.mse - (self.squared_bias + self.variance)).abs()
    }

    /// The decomposition holds up to the finite-sample correction (plus rounding).
    pub fn identity_holds(&self) -> bool {
        let tol = 1e-9 * (self.mse.abs() + self.variance.abs()).max(1e-12);
        (self.mse - (self.squared_bias + self.variance - self.correction)).abs() <= tol
            && self.identity_gap() <= self.correction + tol
    }
}

/// Runs `denoiser` on `trials` AWGN realizations of `x` and decomposes its error.
/// Trial `t` uses noise seed `seed + t`.
pub fn bias_variance<F>(denoiser: F, x: &Image, sigma: f64, trials: usize, seed: u64) -> Result<BiasVarianceResult>
where
    F: Fn(&Image) -> Result<Image>,
{
    if trials < 2 {
        return Err(Error::Config("bias-variance needs at least 2 trials".into()));
    }
    let d = x.len();
    let mut sum = vec![0.0; d];
    let mut outputs = Vec::with_capacity(trials);
    for t in 0..trials {
        let y = add_awgn(x, sigma, seed.wrapping_add(t as u64))?;
        let est = denoiser(&y)?;
        x.check_shape(&est)?;
        for (s, v) in sum.iter_mut().zip(est.data()) {
            *s += v;
        }
        outputs.push(est);
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / trials as f64).collect();
    let squared_bias = mean
        .iter()
        .zip(x.data())
        .map(|(m, v)| (m - v) * (m - v))
        .sum::<f64>()
        / d as f64;
    let mut mse_sum = 0.0;
    let mut var_sum = 0.0;
    for est in &outputs {
        for ((e, m), v) in est.data().iter().zip(&mean).zip(x.data()) {
            mse_sum += (e - v) * (e - v);
            var_sum += (e - m) * (e - m);
        }
    }
    let mse = mse_sum / (trials * d) as f64;
    let variance = var_sum / ((trials - 1) * d) as f64;
    Ok(BiasVarianceResult {
        mse,
        squared_bias,
        variance,
        correction: variance / trials as f64,
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_of_sigma_25_noise() {
        let x = Image::filled(4, 4, 100.0);
        let y = x.map(|v| v + 25.0);
        assert!((psnr(&x, &y).unwrap() - 20.172).abs() < 5e-4);
        let y = x.map(|v| v - 15.0);
        assert!((psnr(&x, &y).unwrap() - 24.609).abs() < 5e-4);
    }

    #[test]
    fn identical_images_give_sentinel() {
        let x = Image::filled(3, 3, 1.0);
        assert_eq!(psnr(&x, &x).unwrap(), PSNR_IDENTICAL);
    }

    #[test]
    fn psnr_shift_invariant() {
        let x = Image::from_fn(8, 8, |r, c| (r * c) as f64);
        let y = Image::from_fn(8, 8, |r, c| (r * c) as f64 + ((r + c) % 3) as f64);
        let a = psnr(&x, &y).unwrap();
        let b = psnr(&x.map(|v| v + 17.0), &y.map(|v| v + 17.0)).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch() {
        assert!(psnr(&Image::filled(2, 3, 0.0), &Image::filled(3, 2, 0.0)).is_err());
    }

    #[test]
    fn identity_denoiser() {
        let x = Image::from_fn(32, 32, |r, c| (r + c) as f64);
        let bv = bias_variance(|y| Ok(y.clone()), &x, 5.0, 50, 1).unwrap();
        assert!(bv.squared_bias < 1.0);
        assert!((bv.variance / 25.0 - 1.0).abs() < 0.05);
        assert!(bv.identity_holds());
    }

    #[test]
    fn oracle_denoisers() {
        let x = Image::from_fn(16, 16, |r, c| (r * 3 + c) as f64);
        let exact = bias_variance(|_| Ok(x.clone()), &x, 5.0, 3, 1).unwrap();
        assert_eq!(exact.mse, 0.0);
        let shifted = bias_variance(|_| Ok(x.map(|v| v + 2.0)), &x, 5.0, 3, 1).unwrap();
        assert!((shifted.squared_bias - 4.0).abs() < 1e-12);
        assert!(shifted.variance.abs() < 1e-20);
        assert!(bias_variance(|y| Ok(y.clone()), &x, 5.0, 1, 1).is_err());
    }
}
