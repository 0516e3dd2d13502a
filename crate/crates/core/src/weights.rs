//! Closed-form combination weights for the group denoiser `Y -> Y Θ`.
//!
//! All estimators reduce to the ridge form `(G + λI)⁻¹(G − μI)` with `G` a
//! Gram matrix, which minimizes `‖AΘ − A‖²_F + λ‖Θ‖²_F + 2μ tr(Θ)` for
//! `G = AᵀA`. The `*_from_gram` variants let callers reuse one Gram product.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gram, solve_spd, SmallMatrix};

/// Noisier2Noise extra-noise ratio used unless configured otherwise.
pub const DEFAULT_ALPHA: f64 = 0.5;

/// A `k x k` weight matrix, applied on the right of a similarity matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix(SmallMatrix);

impl WeightMatrix {
    pub fn new(m: SmallMatrix) -> Result<Self> {
        if m.rows() != m.cols() {
            return Err(Error::DimensionMismatch {
                expected: "square weight matrix".into(),
                actual: format!("{}x{}", m.rows(), m.cols()),
            });
        }
        Ok(Self(m))
    }

    pub fn k(&self) -> usize {
        self.0.rows()
    }

    pub fn as_matrix(&self) -> &SmallMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> SmallMatrix {
        self.0
    }

    /// `Y Θ`.
    pub fn apply(&self, y: &SmallMatrix) -> SmallMatrix {
        y.matmul(&self.0)
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }
}

/// Weight family used to build a pilot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum PilotMethod {
    Sure,
    #[serde(rename = "nr2n")]
    Noisier2Noise {
        alpha: f64,
    },
    Avg,
    Noisy,
}

impl Default for PilotMethod {
    fn default() -> Self {
        PilotMethod::Noisier2Noise {
            alpha: DEFAULT_ALPHA,
        }
    }
}

impl PilotMethod {
    pub fn validate(&self) -> Result<()> {
        match *self {
            PilotMethod::Noisier2Noise { alpha } if !(alpha > 0.0 && alpha.is_finite()) => Err(
                Error::Config(format!("alpha must be positive, got {alpha}")),
            ),
            _ => Ok(()),
        }
    }

    /// Short name used on the command line and in reports.
    pub fn name(&self) -> &'static str {
        match self {
            PilotMethod::Sure => "sure",
            PilotMethod::Noisier2Noise { .. } => "nr2n",
            PilotMethod::Avg => "avg",
            PilotMethod::Noisy => "noisy",
        }
    }

    /// Weights for one noisy similarity matrix `y` (`n x k`).
    pub fn weights(&self, y: &SmallMatrix, sigma: f64) -> Result<WeightMatrix> {
        let k = y.cols();
        match *self {
            PilotMethod::Sure => weights_sure(y, sigma),
            PilotMethod::Noisier2Noise { alpha } => weights_nr2n(y, sigma, alpha),
            PilotMethod::Avg => Ok(weights_avg(k)),
            PilotMethod::Noisy => Ok(weights_noisy(k)),
        }
    }
}

impl fmt::Display for PilotMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PilotMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sure" => Ok(PilotMethod::Sure),
            "nr2n" | "noisier2noise" => Ok(PilotMethod::default()),
            "avg" | "average" => Ok(PilotMethod::Avg),
            "noisy" | "identity" => Ok(PilotMethod::Noisy),
            other => Err(Error::Config(format!(
                "unknown pilot '{other}' (expected sure, nr2n, avg or noisy)"
            ))),
        }
    }
}

/// `(G + λI)⁻¹ (G − μI)`.
pub fn ridge_form(g: &SmallMatrix, lambda: f64, mu: f64) -> Result<WeightMatrix> {
    let mut rhs = g.clone();
    rhs.shift_diagonal(-mu);
    WeightMatrix::new(solve_spd(g, lambda, &rhs)?)
}

/// SURE-minimizing weights `(YᵀY)⁻¹(YᵀY − nσ²I)`.
pub fn weights_sure(y: &SmallMatrix, sigma: f64) -> Result<WeightMatrix> {
    sure_from_gram(&gram(y), y.rows(), sigma)
}

pub fn sure_from_gram(g: &SmallMatrix, n: usize, sigma: f64) -> Result<WeightMatrix> {
    ridge_form(g, 0.0, n as f64 * sigma * sigma).map_err(|e| match e {
        Error::Singular { pivot, value } => Error::SureSingular { pivot, value },
        other => other,
    })
}

/// Stein's unbiased estimate of `E‖YΘ − X‖²_F`:
/// `−knσ² + ‖YΘ − Y‖²_F + 2nσ² tr(Θ)`.
pub fn sure_value(y: &SmallMatrix, theta: &WeightMatrix, sigma: f64) -> f64 {
    let (n, k) = (y.rows() as f64, y.cols() as f64);
    let s2 = sigma * sigma;
    let resid = theta.apply(y).sub(y).frobenius_sq();
    -k * n * s2 + resid + 2.0 * n * s2 * theta.trace()
}

/// Noisier2Noise weights `(YᵀY + n(ασ)²I)⁻¹(YᵀY − nσ²I)`.
pub fn weights_nr2n(y: &SmallMatrix, sigma: f64, alpha: f64) -> Result<WeightMatrix> {
    nr2n_from_gram(&gram(y), y.rows(), sigma, alpha)
}

pub fn nr2n_from_gram(g: &SmallMatrix, n: usize, sigma: f64, alpha: f64) -> Result<WeightMatrix> {
    if !(alpha > 0.0) {
        return Err(Error::Config(format!("alpha must be positive, got {alpha}")));
    }
    let n = n as f64;
    let a = alpha * sigma;
    if a == 0.0 {
        // σ = 0: nothing to remove.
        return Ok(weights_noisy(g.rows()));
    }
    ridge_form(g, n * a * a, n * sigma * sigma)
}

/// Plain averaging `1 1ᵀ / k`.
pub fn weights_avg(k: usize) -> WeightMatrix {
    WeightMatrix(SmallMatrix::from_fn(k, k, |_, _| 1.0 / k as f64))
}

/// Do-nothing weights `I_k`.
pub fn weights_noisy(k: usize) -> WeightMatrix {
    WeightMatrix(SmallMatrix::identity(k))
}
