//! First-pass pilot: one round of grouped linear combinations with a chosen
//! weight family, aggregated by plain averaging.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::linalg::SmallMatrix;
use crate::metrics;
use crate::patch::{aggregate_with, extract_groups, select_single, GroupSet};
use crate::weights::PilotMethod;
use crate::exec;

pub const DEFAULT_WINDOW: usize = 65;
pub const DEFAULT_STEP: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PilotConfig {
    pub patch_side: usize,
    pub group_size: usize,
    pub method: PilotMethod,
    pub window: usize,
    pub step: usize,
}

/// Recommended pilot patch side, pilot group size and iteration count for a
/// noise level, by band: `(0, 10]`, `(10, 30]`, `(30, 50]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseBand {
    pub patch_side: usize,
    pub group_size: usize,
    pub iterations: usize,
}

pub fn noise_band(sigma: f64) -> Result<NoiseBand> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Config("sigma must be positive".into()));
    }
    if sigma > 50.0 {
        log::warn!("sigma = {sigma} is above the tabulated range; using the (30, 50] settings");
    }
    Ok(if sigma <= 10.0 {
        NoiseBand {
            patch_side: 9,
            group_size: 16,
            iterations: 6,
        }
    } else if sigma <= 30.0 {
        NoiseBand {
            patch_side: 11,
            group_size: 16,
            iterations: 9,
        }
    } else {
        NoiseBand {
            patch_side: 13,
            group_size: 16,
            iterations: 11,
        }
    })
}

/// Tabulated pilot settings with Noisier2Noise weights (α = 0.5).
pub fn default_pilot_config(sigma: f64) -> Result<PilotConfig> {
    let band = noise_band(sigma)?;
    Ok(PilotConfig {
        patch_side: band.patch_side,
        group_size: band.group_size,
        method: PilotMethod::default(),
        window: DEFAULT_WINDOW,
        step: DEFAULT_STEP,
    })
}

impl PilotConfig {
    pub fn validate(&self) -> Result<()> {
        validate_geometry(self.patch_side, self.group_size, self.window, self.step)?;
        self.method.validate()
    }
}

pub(crate) fn validate_geometry(patch_side: usize, k: usize, window: usize, step: usize) -> Result<()> {
    if patch_side == 0 {
        return Err(Error::Config("patch side must be at least 1".into()));
    }
    if k == 0 {
        return Err(Error::Config("group size must be at least 1".into()));
    }
    if step == 0 || step > patch_side {
        return Err(Error::Config(format!(
            "step must be between 1 and the patch side ({patch_side}), got {step}"
        )));
    }
    let half = window / 2;
    if (2 * half + 1) * (2 * half + 1) < k {
        return Err(Error::Config(format!(
            "a {window}x{window} search window cannot hold {k} patches"
        )));
    }
    Ok(())
}

fn group_estimate(method: &PilotMethod, y: &SmallMatrix, sigma: f64) -> Result<SmallMatrix> {
    Ok(method.weights(y, sigma)?.apply(y))
}

/// Builds the pilot image: every group of `y` is replaced by `Y Θ` and the
/// results are aggregated.
pub fn pilot_denoise(y: &Image, sigma: f64, cfg: &PilotConfig) -> Result<Image> {
    if !(sigma > 0.0) {
        return Err(Error::Config("sigma must be positive".into()));
    }
    cfg.validate()?;
    let gs = extract_groups(y, cfg.patch_side, cfg.group_size, cfg.window, cfg.step)?;
    pilot_on_groups(y, sigma, cfg, &gs)
}

/// Same as [`pilot_denoise`] with geometry supplied by the caller.
pub fn pilot_on_groups(y: &Image, sigma: f64, cfg: &PilotConfig, gs: &GroupSet) -> Result<Image> {
    let method = cfg.method;
    let mut out = aggregate_with(gs, 1, |i| {
        let yg = gs.matrix(i, y);
        Ok(vec![group_estimate(&method, &yg, sigma)?])
    })?;
    Ok(out.pop().expect("one output"))
}

/// Group estimates of the pilot pass, kept in memory (intended for small
/// images and analysis rather than the production path).
pub fn pilot_estimates(y: &Image, sigma: f64, cfg: &PilotConfig) -> Result<(GroupSet, Vec<SmallMatrix>)> {
    cfg.validate()?;
    let gs = extract_groups(y, cfg.patch_side, cfg.group_size, cfg.window, cfg.step)?;
    let method = cfg.method;
    let est = exec::map_range(gs.len(), |i| group_estimate(&method, &gs.matrix(i, y), sigma))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok((gs, est))
}

/// Pilot without aggregation: one estimate per pixel taken from the most
/// central pixel of the denoised reference patches.
pub fn pilot_single_estimate(y: &Image, sigma: f64, cfg: &PilotConfig, seed: u64) -> Result<Image> {
    let (gs, est) = pilot_estimates(y, sigma, cfg)?;
    select_single(&gs, &est, y.height(), y.width(), seed)
}

/// Mean PSNR between denoised and clean similarity matrices over all groups.
pub fn group_level_psnr(y: &Image, clean: &Image, sigma: f64, cfg: &PilotConfig) -> Result<f64> {
    y.check_shape(clean)?;
    let (gs, est) = pilot_estimates(y, sigma, cfg)?;
    let vals: Vec<f64> = exec::map_range(gs.len(), |i| {
        let truth = gs.matrix(i, clean);
        let mse = est[i].sub(&truth).frobenius_sq() / (truth.rows() * truth.cols()) as f64;
        metrics::psnr_from_mse(mse, 255.0)
    });
    let finite: Vec<f64> = vals.into_iter().filter(|v| v.is_finite()).collect();
    Ok(finite.iter().sum::<f64>() / finite.len().max(1) as f64)
}
