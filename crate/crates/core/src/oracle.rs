//! Slow, direct implementations of the closed-form weight results, used to
//! validate the production kernels. Everything here runs on `nalgebra` with
//! general LU solves and never calls into [`crate::linalg`].

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::SmallMatrix;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub case_id: String,
    pub closed_form_objective: f64,
    pub oracle_objective: f64,
    pub max_deviation: f64,
}

impl OracleReport {
    pub fn new(case_id: impl Into<String>, closed_form: f64, oracle: f64, max_deviation: f64) -> Self {
        Self {
            case_id: case_id.into(),
            closed_form_objective: closed_form,
            oracle_objective: oracle,
            max_deviation: max_deviation.abs(),
        }
    }
}

pub fn to_dmatrix(m: &SmallMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

pub fn from_dmatrix(m: &DMatrix<f64>) -> SmallMatrix {
    SmallMatrix::from_fn(m.nrows(), m.ncols(), |r, c| m[(r, c)])
}

/// `H(Θ) = ‖AΘ − A‖² + λ‖Θ‖² + 2μ tr Θ`.
pub fn lemma1_objective(a: &DMatrix<f64>, theta: &DMatrix<f64>, lambda: f64, mu: f64) -> f64 {
    (a * theta - a).norm_squared() + lambda * theta.norm_squared() + 2.0 * mu * theta.trace()
}

/// Minimizer of [`lemma1_objective`], solving the normal equations one column at a time.
pub fn oracle_lemma1(a: &DMatrix<f64>, lambda: f64, mu: f64) -> Result<DMatrix<f64>> {
    let k = a.ncols();
    let mut lhs = a.transpose() * a;
    for i in 0..k {
        lhs[(i, i)] += lambda;
    }
    let lu = lhs.clone().lu();
    let mut theta = DMatrix::zeros(k, k);
    for j in 0..k {
        let mut rhs = a.transpose() * a.column(j);
        rhs[j] -= mu;
        let col = lu.solve(&rhs).ok_or(Error::Singular { pivot: j, value: 0.0 })?;
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular { pivot: j, value: f64::NAN });
        }
        theta.set_column(j, &col);
    }
    Ok(theta)
}

/// Central finite-difference gradient of [`lemma1_objective`].
pub fn lemma1_numeric_gradient(a: &DMatrix<f64>, theta: &DMatrix<f64>, lambda: f64, mu: f64, h: f64) -> DMatrix<f64> {
    let k = theta.nrows();
    let mut grad = DMatrix::zeros(k, k);
    for r in 0..k {
        for c in 0..k {
            let mut p = theta.clone();
            p[(r, c)] += h;
            let mut m = theta.clone();
            m[(r, c)] -= h;
            grad[(r, c)] = (lemma1_objective(a, &p, lambda, mu) - lemma1_objective(a, &m, lambda, mu)) / (2.0 * h);
        }
    }
    grad
}

/// Empirical minimizer of `E‖(X + τ₁W)Θ − (X + τ₂W)‖²` over `samples` draws of
/// `W` with i.i.d. `N(0, σ²)` entries, from the sampled second moments.
pub fn oracle_prop1(x: &DMatrix<f64>, sigma: f64, tau1: f64, tau2: f64, samples: usize, seed: u64) -> Result<DMatrix<f64>> {
    if tau1 == 0.0 {
        return Err(Error::Config("tau1 must be non-zero".into()));
    }
    if samples == 0 {
        return Err(Error::Config("at least one sample is required".into()));
    }
    let (n, k) = x.shape();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut lhs = DMatrix::<f64>::zeros(k, k);
    let mut rhs = DMatrix::<f64>::zeros(k, k);
    let mut w = DMatrix::<f64>::zeros(n, k);
    for _ in 0..samples {
        for v in w.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = sigma * z;
        }
        let input = x + &w * tau1;
        let target = x + &w * tau2;
        let it = input.transpose();
        lhs += &it * &input;
        rhs += &it * &target;
    }
    lhs /= samples as f64;
    rhs /= samples as f64;
    lhs.lu()
        .solve(&rhs)
        .ok_or(Error::Singular { pivot: 0, value: 0.0 })
}

/// `(XᵀX + nτ₁²σ²I)⁻¹(XᵀX + nτ₁τ₂σ²I)`, the exact minimizer, written out directly.
pub fn prop1_exact(x: &DMatrix<f64>, sigma: f64, tau1: f64, tau2: f64) -> Result<DMatrix<f64>> {
    let (n, k) = x.shape();
    let g = x.transpose() * x;
    let id = DMatrix::<f64>::identity(k, k);
    let lhs = &g + &id * (n as f64 * tau1 * tau1 * sigma * sigma);
    let rhs = &g + &id * (n as f64 * tau1 * tau2 * sigma * sigma);
    lhs.lu().solve(&rhs).ok_or(Error::Singular { pivot: 0, value: 0.0 })
}

/// Risk of `Θ` for a clean group `X` under noise `σ`: `‖XΘ − X‖² + nσ²‖Θ‖²`.
pub fn linear_risk(x: &DMatrix<f64>, theta: &DMatrix<f64>, sigma: f64) -> f64 {
    (x * theta - x).norm_squared() + x.nrows() as f64 * sigma * sigma * theta.norm_squared()
}

/// Random matrix with non-negative entries whose columns each sum to one
/// (columns drawn uniformly from the simplex).
pub fn random_left_stochastic<R: Rng>(k: usize, rng: &mut R) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(k, k);
    for c in 0..k {
        let draws: Vec<f64> = (0..k).map(|_| Exp1.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        for (r, d) in draws.iter().enumerate() {
            m[(r, c)] = d / total;
        }
    }
    m
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prop4Verdict {
    pub pass: bool,
    pub avg_risk: f64,
    pub best_candidate_risk: f64,
    pub candidates: usize,
}

/// Checks that uniform averaging has the lowest risk among `candidates`
/// random left-stochastic matrices for a group of identical columns.
pub fn oracle_prop4(x: &DMatrix<f64>, sigma: f64, candidates: usize, seed: u64) -> Result<Prop4Verdict> {
    let k = x.ncols();
    let first = x.column(0);
    if x.column_iter().any(|c| c != first) {
        return Err(Error::Config("all columns of X must be equal".into()));
    }
    let avg = DMatrix::from_element(k, k, 1.0 / k as f64);
    let avg_risk = linear_risk(x, &avg, sigma);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut best = f64::INFINITY;
    for _ in 0..candidates {
        let cand = random_left_stochastic(k, &mut rng);
        best = best.min(linear_risk(x, &cand, sigma));
    }
    let tol = 1e-9 * avg_risk.abs().max(1.0);
    Ok(Prop4Verdict {
        pass: candidates == 0 || avg_risk <= best + tol,
        avg_risk,
        best_candidate_risk: best,
        candidates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lemma1_trivial_case_is_identity() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let theta = oracle_lemma1(&a, 0.0, 0.0).unwrap();
        assert!((theta - DMatrix::identity(2, 2)).abs().max() < 1e-12);
    }

    #[test]
    fn lemma1_singular() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
        assert!(oracle_lemma1(&a, 0.0, 0.1).is_err());
        assert!(oracle_lemma1(&a, 0.5, 0.1).is_ok());
    }

    #[test]
    fn prop1_degenerate_cases() {
        let x = DMatrix::from_fn(4, 3, |r, c| (r * 3 + c) as f64 + 1.0);
        let same = prop1_exact(&x, 2.0, 0.7, 0.7).unwrap();
        assert!((same - DMatrix::identity(3, 3)).abs().max() < 1e-12);
        let zero = prop1_exact(&DMatrix::zeros(4, 3), 2.0, 0.8, 0.2).unwrap();
        assert!((zero - DMatrix::identity(3, 3) * 0.25).abs().max() < 1e-12);
        let mc = oracle_prop1(&DMatrix::zeros(4, 3), 2.0, 0.8, 0.2, 2000, 1).unwrap();
        assert!((mc - DMatrix::identity(3, 3) * 0.25).abs().max() < 1e-12);
    }

    #[test]
    fn prop4_trivial_cases() {
        let x = DMatrix::from_element(5, 1, 3.0);
        assert!(oracle_prop4(&x, 1.0, 100, 1).unwrap().pass);
        let x = DMatrix::from_fn(4, 3, |r, _| r as f64);
        let avg = DMatrix::from_element(3, 3, 1.0 / 3.0);
        assert_eq!(linear_risk(&x, &avg, 2.0), 4.0 * 4.0 * avg.norm_squared());
        let bad = DMatrix::from_fn(4, 3, |r, c| (r + c) as f64);
        assert!(oracle_prop4(&bad, 1.0, 10, 1).is_err());
    }

    #[test]
    fn stochastic_columns_sum_to_one() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let m = random_left_stochastic(6, &mut rng);
        for c in m.column_iter() {
            assert!((c.sum() - 1.0).abs() < 1e-12);
            assert!(c.iter().all(|&v| v >= 0.0));
        }
    }
}
