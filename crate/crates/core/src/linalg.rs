//! Small dense matrices and the few kernels the weight formulas need:
//! Gram products, ridge-shifted Cholesky solves, traces and norms.
//!
//! Every loop runs in a fixed order, so results are bit-reproducible.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Relative pivot threshold below which a Cholesky factorization is declared singular.
const PIVOT_RTOL: f64 = 1e-12;

/// Dense row-major matrix of modest size (patch groups, Gram matrices, weights).
#[derive(Debug, Clone, PartialEq)]
pub struct SmallMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl SmallMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(k: usize) -> Self {
        Self::scaled_identity(k, 1.0)
    }

    pub fn scaled_identity(k: usize, s: f64) -> Self {
        let mut m = Self::zeros(k, k);
        for i in 0..k {
            m.data[i * k + i] = s;
        }
        m
    }

    /// Builds a matrix from row-major data, rejecting NaN and infinities.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: format!("{rows}x{cols} = {} entries", rows * cols),
                actual: format!("{} entries", data.len()),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / cols.max(1),
                col: pos % cols.max(1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn frobenius(&self) -> f64 {
        self.frobenius_sq().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.combine(1.0, other, -1.0)
    }

    /// Adds `s` to every diagonal entry.
    pub fn shift_diagonal(&mut self, s: f64) {
        let k = self.rows.min(self.cols);
        for i in 0..k {
            self.data[i * self.cols + i] += s;
        }
    }

    /// `self * rhs`.
    pub fn matmul(&self, rhs: &Self) -> Self {
        let mut out = Self::zeros(self.rows, rhs.cols);
        self.matmul_into(rhs, &mut out);
        out
    }

    /// `out = self * rhs`, reusing `out`'s storage.
    pub fn matmul_into(&self, rhs: &Self, out: &mut Self) {
        assert_eq!(self.cols, rhs.rows, "inner dimensions differ");
        out.rows = self.rows;
        out.cols = rhs.cols;
        out.data.clear();
        out.data.resize(self.rows * rhs.cols, 0.0);
        let p = rhs.cols;
        for r in 0..self.rows {
            let orow = &mut out.data[r * p..(r + 1) * p];
            for (l, &a) in self.row(r).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let rrow = &rhs.data[l * p..(l + 1) * p];
                for (o, &b) in orow.iter_mut().zip(rrow) {
                    *o += a * b;
                }
            }
        }
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|i| (0..i).all(|j| self[(i, j)] == self[(j, i)]))
    }

    fn symmetrize(&mut self) {
        let k = self.rows;
        for i in 0..k {
            for j in 0..i {
                let m = 0.5 * (self.data[i * k + j] + self.data[j * k + i]);
                self.data[i * k + j] = m;
                self.data[j * k + i] = m;
            }
        }
    }
}

impl Index<(usize, usize)> for SmallMatrix {
    type Output = f64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for SmallMatrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

/// `AᵀA`, exactly symmetric.
pub fn gram(a: &SmallMatrix) -> SmallMatrix {
    let k = a.cols;
    let mut g = SmallMatrix::zeros(k, k);
    // Accumulate the upper triangle row by row of A, then mirror.
    for r in 0..a.rows {
        let row = a.row(r);
        for i in 0..k {
            let ai = row[i];
            if ai == 0.0 {
                continue;
            }
            let grow = &mut g.data[i * k + i..(i + 1) * k];
            for (gij, &aj) in grow.iter_mut().zip(&row[i..]) {
                *gij += ai * aj;
            }
        }
    }
    for i in 0..k {
        for j in 0..i {
            g.data[i * k + j] = g.data[j * k + i];
        }
    }
    g.symmetrize();
    g
}

/// Dot product with four independent partial sums.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: SmallMatrix,
}

impl Cholesky {
    /// Factors `m + shift * I`.
    pub fn factor(m: &SmallMatrix, shift: f64) -> Result<Self> {
        assert_eq!(m.rows, m.cols, "Cholesky needs a square matrix");
        let k = m.rows;
        let mut l = SmallMatrix::zeros(k, k);
        let scale = (0..k)
            .map(|i| (m[(i, i)] + shift).abs())
            .fold(0.0, f64::max)
            .max(f64::MIN_POSITIVE);
        for j in 0..k {
            let lj = &l.data[j * k..j * k + j];
            let d = m[(j, j)] + shift - dot(lj, lj);
            if !(d > PIVOT_RTOL * scale) || !d.is_finite() {
                return Err(Error::Singular { pivot: j, value: d });
            }
            let djj = d.sqrt();
            l.data[j * k + j] = djj;
            for i in j + 1..k {
                let s = m[(i, j)] - dot(&l.data[i * k..i * k + j], &l.data[j * k..j * k + j]);
                l.data[i * k + j] = s / djj;
            }
        }
        Ok(Self { l })
    }

    /// Solves `(LLᵀ) X = B` for every column of `B`.
    pub fn solve(&self, b: &SmallMatrix) -> SmallMatrix {
        let k = self.l.rows;
        assert_eq!(b.rows, k, "right-hand side has the wrong number of rows");
        let p = b.cols;
        let mut x = b.clone();
        // Forward: L Y = B, row-wise so that each update is a contiguous axpy.
        for i in 0..k {
            for l in 0..i {
                let lil = self.l.data[i * k + l];
                if lil == 0.0 {
                    continue;
                }
                let (head, tail) = x.data.split_at_mut(i * p);
                let src = &head[l * p..(l + 1) * p];
                for (xi, &xl) in tail[..p].iter_mut().zip(src) {
                    *xi -= lil * xl;
                }
            }
            let inv = 1.0 / self.l.data[i * k + i];
            for v in &mut x.data[i * p..(i + 1) * p] {
                *v *= inv;
            }
        }
        // Backward: Lᵀ X = Y.
        for i in (0..k).rev() {
            for l in i + 1..k {
                let lli = self.l.data[l * k + i];
                if lli == 0.0 {
                    continue;
                }
                let (head, tail) = x.data.split_at_mut(l * p);
                let src = &tail[..p];
                for (xi, &xl) in head[i * p..(i + 1) * p].iter_mut().zip(src) {
                    *xi -= lli * xl;
                }
            }
            let inv = 1.0 / self.l.data[i * k + i];
            for v in &mut x.data[i * p..(i + 1) * p] {
                *v *= inv;
            }
        }
        x
    }

    pub fn factor_matrix(&self) -> &SmallMatrix {
        &self.l
    }
}

/// `(M + λI)⁻¹ B` through a Cholesky factorization of `M + λI`.
pub fn solve_spd(m: &SmallMatrix, lambda: f64, b: &SmallMatrix) -> Result<SmallMatrix> {
    if m.rows != m.cols || b.rows != m.rows {
        return Err(Error::DimensionMismatch {
            expected: format!("square system with {} rows", m.rows),
            actual: format!("{}x{} system, {}x{} right-hand side", m.rows, m.cols, b.rows, b.cols),
        });
    }
    Ok(Cholesky::factor(m, lambda)?.solve(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> SmallMatrix {
        SmallMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn naive_gram(a: &SmallMatrix) -> SmallMatrix {
        let k = a.cols();
        let mut g = SmallMatrix::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                let mut s = 0.0;
                for r in 0..a.rows() {
                    s += a[(r, i)] * a[(r, j)];
                }
                g[(i, j)] = s;
            }
        }
        g
    }

    #[test]
    fn gram_of_identity() {
        let g = gram(&SmallMatrix::identity(2));
        assert_eq!(g, SmallMatrix::identity(2));
    }

    #[test]
    fn gram_of_single_column_is_squared_norm() {
        let a = SmallMatrix::from_row_major(3, 1, vec![1.0, 2.0, -2.0]).unwrap();
        assert_eq!(gram(&a).as_slice(), &[9.0]);
    }

    #[test]
    fn gram_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&mut rng, 5, 3);
        let g = gram(&a);
        assert!(g.is_symmetric());
        assert!(g.max_abs_diff(&naive_gram(&a)) < 1e-14);
        assert!((0..3).all(|i| g[(i, i)] >= 0.0));
    }

    #[test]
    fn solve_identity() {
        let i = SmallMatrix::identity(3);
        assert_eq!(solve_spd(&i, 0.0, &i).unwrap(), i);
    }

    #[test]
    fn solve_zero_matrix_with_ridge() {
        let m = SmallMatrix::zeros(2, 2);
        let b = SmallMatrix::from_row_major(2, 2, vec![4.0, 0.0, 0.0, 6.0]).unwrap();
        let x = solve_spd(&m, 2.0, &b).unwrap();
        let want = [2.0, 0.0, 0.0, 3.0];
        for (a, b) in x.as_slice().iter().zip(want) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn solve_residual_is_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for k in [1, 4, 16, 64] {
            let a = random(&mut rng, k + 5, k);
            let m = gram(&a);
            let b = random(&mut rng, k, k);
            let lambda = 0.1;
            let x = solve_spd(&m, lambda, &b).unwrap();
            let mut shifted = m.clone();
            shifted.shift_diagonal(lambda);
            let resid = shifted.matmul(&x).sub(&b).frobenius();
            assert!(
                resid <= 1e-8 * (m.frobenius() + lambda) * x.frobenius(),
                "k={k} residual {resid}"
            );
        }
    }

    #[test]
    fn singular_system_is_reported() {
        let a = SmallMatrix::from_row_major(3, 2, vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0]).unwrap();
        let g = gram(&a);
        let err = solve_spd(&g, 0.0, &SmallMatrix::identity(2)).unwrap_err();
        assert!(matches!(err, Error::Singular { .. }));
    }

    #[test]
    fn non_finite_entries_rejected() {
        assert!(SmallMatrix::from_row_major(1, 2, vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn matmul_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random(&mut rng, 4, 6);
        let b = random(&mut rng, 6, 3);
        let c = a.matmul(&b);
        for i in 0..4 {
            for j in 0..3 {
                let s: f64 = (0..6).map(|l| a[(i, l)] * b[(l, j)]).sum();
                assert!((c[(i, j)] - s).abs() < 1e-14);
            }
        }
    }
}
