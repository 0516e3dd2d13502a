//! The iterated denoiser: `M` rounds of grouped linear combinations, each
//! targeting a progressively less noisy virtual image, with closed-form
//! weights computed from a pilot that is itself refreshed every round.
//!
//! Round `m` uses groups matched on `z_{m-1}` and, for every group:
//!
//! ```text
//! t  = 1 − sd(Y − Z) / σ                       (clamped to [t_min, 1])
//! Ξ  = (X̃ᵀX̃ + n(tσ)² I)⁻¹ X̃ᵀX̃
//! Θ  = (1 − τ_m/t) Ξ + (τ_m/t) I
//! Z ← Z Θ,   X̃ ← Z Ξ
//! ```
//!
//! followed by aggregation of both into `z_m` and the next pilot.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::image::Image;
use crate::linalg::{gram, solve_spd, Cholesky, SmallMatrix};
use crate::patch::{aggregate_with, extract_groups, GroupSet};
use crate::pilot::{self, PilotConfig};
use crate::weights::WeightMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LichiConfig {
    pub patch_side: usize,
    pub group_size: usize,
    pub iterations: usize,
    /// `τ_m = tau_scale · (1 − m/M)`.
    pub tau_scale: f64,
    pub window: usize,
    pub step: usize,
    pub rematch_period: usize,
    pub t_min: f64,
    pub pilot: PilotConfig,
}

impl LichiConfig {
    /// Defaults for a given noise level: 6x6 patches, groups of 64, and the
    /// tabulated iteration count and pilot settings.
    pub fn for_sigma(sigma: f64) -> Result<Self> {
        let band = pilot::noise_band(sigma)?;
        Ok(Self {
            patch_side: 6,
            group_size: 64,
            iterations: band.iterations,
            tau_scale: 0.75,
            window: pilot::DEFAULT_WINDOW,
            step: pilot::DEFAULT_STEP,
            rematch_period: 3,
            t_min: 0.05,
            pilot: pilot::default_pilot_config(sigma)?,
        })
    }

    pub fn tau(&self, m: usize) -> f64 {
        self.tau_scale * (1.0 - m as f64 / self.iterations as f64)
    }

    pub fn taus(&self) -> Vec<f64> {
        (1..=self.iterations).map(|m| self.tau(m)).collect()
    }

    /// Whether round `m` (1-based) re-runs block matching.
    pub fn rematches_at(&self, m: usize) -> bool {
        (m - 1).is_multiple_of(self.rematch_period)
    }

    pub fn validate(&self) -> Result<()> {
        pilot::validate_geometry(self.patch_side, self.group_size, self.window, self.step)?;
        self.pilot.validate()?;
        if self.iterations == 0 {
            return Err(Error::Config("at least one iteration is required".into()));
        }
        if !(0.0..1.0).contains(&self.tau_scale) {
            return Err(Error::Config(format!(
                "tau scale must lie in [0, 1), got {}",
                self.tau_scale
            )));
        }
        if self.rematch_period == 0 {
            return Err(Error::Config("rematch period must be at least 1".into()));
        }
        if !(self.t_min > 0.0 && self.t_min <= 1.0) {
            return Err(Error::Config(format!("t_min must lie in (0, 1], got {}", self.t_min)));
        }
        Ok(())
    }
}

/// Fraction of the original noise left in `z`, from `sd(y − z) = (1 − t) σ`.
/// `sd` is the population standard deviation over all entries.
pub fn estimate_t(yg: &SmallMatrix, zg: &SmallMatrix, sigma: f64, t_min: f64) -> f64 {
    let a = yg.as_slice();
    let b = zg.as_slice();
    let len = a.len() as f64;
    let mean = a.iter().zip(b).map(|(p, q)| p - q).sum::<f64>() / len;
    let var = a
        .iter()
        .zip(b)
        .map(|(p, q)| {
            let d = p - q - mean;
            d * d
        })
        .sum::<f64>()
        / len;
    (1.0 - var.sqrt() / sigma).clamp(t_min, 1.0)
}

/// Pilot-update weights `Ξ` and step weights `Θ` from the pilot Gram matrix.
pub fn step_weights(
    gx: &SmallMatrix,
    t: f64,
    sigma: f64,
    tau: f64,
    n: usize,
) -> Result<(WeightMatrix, WeightMatrix)> {
    let xi = pilot_update(gx, t, sigma, n)?;
    let k = gx.rows();
    let ratio = tau / t;
    let theta = xi.combine(1.0 - ratio, &SmallMatrix::identity(k), ratio);
    Ok((WeightMatrix::new(xi)?, WeightMatrix::new(theta)?))
}

fn pilot_update(gx: &SmallMatrix, t: f64, sigma: f64, n: usize) -> Result<SmallMatrix> {
    let lambda = ridge(t, sigma, n);
    if lambda == 0.0 && gx.as_slice().iter().all(|&v| v == 0.0) {
        return Ok(SmallMatrix::zeros(gx.rows(), gx.cols()));
    }
    solve_spd(gx, lambda, gx)
}

fn ridge(t: f64, sigma: f64, n: usize) -> f64 {
    let ts = t * sigma;
    n as f64 * ts * ts
}

/// `Z Ξ` without forming `Ξ`: since `Ξ = I − λ(G + λI)⁻¹`, this is
/// `Z − λ Z (G + λI)⁻¹`, one solve with `n` right-hand sides.
pub fn apply_pilot_update(zg: &SmallMatrix, gx: &SmallMatrix, t: f64, sigma: f64) -> Result<SmallMatrix> {
    let lambda = ridge(t, sigma, zg.rows());
    if !(lambda > 0.0) {
        return Ok(zg.matmul(&pilot_update(gx, t, sigma, zg.rows())?));
    }
    let w = Cholesky::factor(gx, lambda)?.solve(&zg.transpose());
    Ok(SmallMatrix::from_fn(zg.rows(), zg.cols(), |r, c| {
        zg[(r, c)] - lambda * w[(c, r)]
    }))
}

/// Per-round summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationStats {
    pub m: usize,
    pub tau: f64,
    pub rematched: bool,
    pub groups: usize,
    pub mean_t: f64,
    /// Groups whose estimated `t` fell below `τ_m` (negative Ξ coefficient).
    pub t_below_tau: usize,
    /// Groups whose `t` hit the `t_min` floor.
    pub t_clamped: usize,
}

#[derive(Debug, Clone)]
pub struct LichiRun {
    pub output: Image,
    pub stats: Vec<IterationStats>,
}

/// Runs the full denoiser with the configured pilot.
pub fn lichi_denoise(y: &Image, sigma: f64, cfg: &LichiConfig) -> Result<Image> {
    Ok(lichi_run(y, sigma, cfg, None, |_, _| {})?.output)
}

/// Runs the iterations from `initial_pilot` (or the configured pilot stage when
/// `None`). `observe(m, z_m)` is called after every round.
pub fn lichi_run<O>(
    y: &Image,
    sigma: f64,
    cfg: &LichiConfig,
    initial_pilot: Option<Image>,
    mut observe: O,
) -> Result<LichiRun>
where
    O: FnMut(usize, &Image),
{
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Config("sigma must be positive".into()));
    }
    cfg.validate()?;
    let mut pilot_img = match initial_pilot {
        Some(p) => {
            y.check_shape(&p)?;
            p
        }
        None => pilot::pilot_denoise(y, sigma, &cfg.pilot)?,
    };
    let mut z = y.clone();
    let mut groups: Option<GroupSet> = None;
    let mut stats = Vec::with_capacity(cfg.iterations);

    for m in 1..=cfg.iterations {
        let rematched = cfg.rematches_at(m) || groups.is_none();
        if rematched {
            groups = Some(extract_groups(&z, cfg.patch_side, cfg.group_size, cfg.window, cfg.step)?);
        }
        let gs = groups.as_ref().expect("groups matched above");
        let tau = cfg.tau(m);

        let ts = exec::map_range(gs.len(), |i| {
            estimate_t(&gs.matrix(i, y), &gs.matrix(i, &z), sigma, cfg.t_min)
        });

        let z_prev = &z;
        let pilot_prev = &pilot_img;
        let mut out = aggregate_with(gs, 2, |i| {
            let zg = gs.matrix(i, z_prev);
            let xg = gs.matrix(i, pilot_prev);
            let t = ts[i];
            let z_xi = apply_pilot_update(&zg, &gram(&xg), t, sigma)?;
            let ratio = tau / t;
            let z_next = z_xi.combine(1.0 - ratio, &zg, ratio);
            Ok(vec![z_next, z_xi])
        })?;
        let next_pilot = out.pop().expect("pilot output");
        let next_z = out.pop().expect("iterate output");

        stats.push(IterationStats {
            m,
            tau,
            rematched,
            groups: gs.len(),
            mean_t: ts.iter().sum::<f64>() / ts.len().max(1) as f64,
            t_below_tau: ts.iter().filter(|&&t| t < tau).count(),
            t_clamped: ts.iter().filter(|&&t| t <= cfg.t_min).count(),
        });
        log::debug!(
            "round {m}/{}: tau={tau:.4} mean t={:.4} rematched={rematched}",
            cfg.iterations,
            stats.last().map_or(0.0, |s| s.mean_t)
        );
        z = next_z;
        pilot_img = next_pilot;
        observe(m, &z);
    }
    Ok(LichiRun { output: z, stats })
}

/// Output of the naive repeated internal adaptation experiment.
#[derive(Debug, Clone)]
pub struct InternalAdaptationRun {
    pub pilot: Image,
    /// `steps[j]` is the estimate after `j + 1` adaptation steps.
    pub steps: Vec<Image>,
}

/// Repeats the second stage of a two-step denoiser: match groups on the
/// current pilot, fit `Θ = (X̃ᵀX̃ + nσ²I)⁻¹X̃ᵀX̃` against it (τ = 0, t = 1),
/// apply `Θ` to the noisy groups, and use the aggregate as the next pilot.
pub fn repeat_internal_adaptation(
    y: &Image,
    sigma: f64,
    steps: usize,
    cfg: &LichiConfig,
) -> Result<InternalAdaptationRun> {
    if steps == 0 {
        return Err(Error::Config("at least one adaptation step is required".into()));
    }
    if !(sigma > 0.0) {
        return Err(Error::Config("sigma must be positive".into()));
    }
    cfg.validate()?;
    let pilot_img = pilot::pilot_denoise(y, sigma, &cfg.pilot)?;
    let mut current = pilot_img.clone();
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let gs = extract_groups(&current, cfg.patch_side, cfg.group_size, cfg.window, cfg.step)?;
        let pilot_ref = &current;
        let mut est = aggregate_with(&gs, 1, |i| {
            let yg = gs.matrix(i, y);
            let xg = gs.matrix(i, pilot_ref);
            Ok(vec![apply_pilot_update(&yg, &gram(&xg), 1.0, sigma)?])
        })?;
        current = est.pop().expect("one output");
        out.push(current.clone());
    }
    Ok(InternalAdaptationRun {
        pilot: pilot_img,
        steps: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: usize, cols: usize, f: impl FnMut(usize, usize) -> f64) -> SmallMatrix {
        SmallMatrix::from_fn(rows, cols, f)
    }

    #[test]
    fn t_is_one_when_z_equals_y() {
        let y = mat(4, 3, |r, c| (r * 3 + c) as f64);
        assert_eq!(estimate_t(&y, &y, 10.0, 0.05), 1.0);
    }

    #[test]
    fn t_from_known_residual() {
        // Residual entries ±σ/2 with zero mean: population sd is exactly σ/2.
        let sigma = 8.0;
        let y = mat(4, 4, |r, c| (r + 2 * c) as f64);
        let z = mat(4, 4, |r, c| {
            let s = if (r + c) % 2 == 0 { 1.0 } else { -1.0 };
            (r + 2 * c) as f64 - s * sigma / 2.0
        });
        assert!((estimate_t(&y, &z, sigma, 0.05) - 0.5).abs() < 1e-15);
        // A constant offset does not change the estimate.
        let z2 = mat(4, 4, |r, c| z[(r, c)] + 3.0);
        assert!((estimate_t(&y, &z2, sigma, 0.05) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn t_is_clamped() {
        let sigma = 5.0;
        let y = mat(2, 2, |_, _| 0.0);
        let z = mat(2, 2, |r, c| if (r + c) % 2 == 0 { 1.2 * sigma } else { -1.2 * sigma });
        assert_eq!(estimate_t(&y, &z, sigma, 0.05), 0.05);
    }

    #[test]
    fn identity_step_when_tau_equals_t() {
        let x = mat(9, 4, |r, c| ((r * 5 + c * 3) % 7) as f64 + 1.0);
        let gx = gram(&x);
        let (_, theta) = step_weights(&gx, 0.4, 10.0, 0.4, 9).unwrap();
        assert!(theta.as_matrix().max_abs_diff(&SmallMatrix::identity(4)) < 1e-15);
    }

    #[test]
    fn zero_gram() {
        let (xi, theta) = step_weights(&SmallMatrix::zeros(3, 3), 0.5, 2.0, 0.2, 4).unwrap();
        assert!(xi.as_matrix().as_slice().iter().all(|&v| v == 0.0));
        assert!(theta.as_matrix().max_abs_diff(&SmallMatrix::scaled_identity(3, 0.4)) < 1e-15);
    }

    #[test]
    fn direct_update_matches_explicit_weights() {
        let x = mat(16, 6, |r, c| ((r * 7 + c * 11) % 13) as f64 * 4.0 + c as f64);
        let z = mat(16, 6, |r, c| x[(r, c)] + ((r + 2 * c) % 5) as f64 - 2.0);
        let gx = gram(&x);
        for (t, sigma) in [(1.0, 10.0), (0.3, 25.0), (0.05, 50.0)] {
            let (xi, _) = step_weights(&gx, t, sigma, 0.0, 16).unwrap();
            let explicit = z.matmul(xi.as_matrix());
            let direct = apply_pilot_update(&z, &gx, t, sigma).unwrap();
            let scale = explicit.frobenius().max(1.0);
            assert!(direct.max_abs_diff(&explicit) <= 1e-10 * scale);
        }
    }

    #[test]
    fn schedule_and_defaults() {
        let cfg = LichiConfig::for_sigma(25.0).unwrap();
        assert_eq!((cfg.patch_side, cfg.group_size, cfg.iterations), (6, 64, 9));
        assert_eq!((cfg.pilot.patch_side, cfg.pilot.group_size), (11, 16));
        let taus = cfg.taus();
        assert!(taus.windows(2).all(|w| w[0] > w[1]));
        assert!(taus.iter().all(|&t| (0.0..1.0).contains(&t)));
        assert_eq!(*taus.last().unwrap(), 0.0);
        assert!((taus[0] - 0.75 * (1.0 - 1.0 / 9.0)).abs() < 1e-15);
        let rematch: Vec<usize> = (1..=9).filter(|&m| cfg.rematches_at(m)).collect();
        assert_eq!(rematch, vec![1, 4, 7]);
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = LichiConfig::for_sigma(15.0).unwrap();
        cfg.iterations = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = LichiConfig::for_sigma(15.0).unwrap();
        cfg.rematch_period = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = LichiConfig::for_sigma(15.0).unwrap();
        cfg.t_min = 0.0;
        assert!(cfg.validate().is_err());
        let img = Image::filled(32, 32, 0.0);
        assert!(lichi_denoise(&img, 0.0, &LichiConfig::for_sigma(15.0).unwrap()).is_err());
    }
}
