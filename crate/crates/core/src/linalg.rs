//! Dense linear algebra: a row-major [`Matrix`], SPD Cholesky factorization,
//! triangular solves and SPD inversion.
//!
//! Everything is dense. Sparsity patterns (the arrow-shaped whitening factor)
//! are enforced by explicit zeroing in [`crate::whitening`].

use std::fmt;
use std::ops::{Index, IndexMut};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not positive definite (pivot {pivot} is {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("matrix is not symmetric (entry ({row}, {col}) differs by {diff:e})")]
    NotSymmetric { row: usize, col: usize, diff: f64 },
    #[error("triangular matrix is singular at diagonal index {index}")]
    SingularTriangular { index: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix contains non-finite entries")]
    NonFinite,
}

/// Dense row-major matrix of `f64`.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    /// Builds a matrix from a row-major buffer.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if rows * cols != data.len() {
            return Err(LinalgError::DimensionMismatch(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows. Panics on ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let n = rows.len();
        let m = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(n * m);
        for r in rows {
            let r = r.as_ref();
            assert_eq!(r.len(), m, "ragged rows");
            data.extend_from_slice(r);
        }
        Self { rows: n, cols: m, data }
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
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn trace(&self) -> f64 {
        self.diagonal().iter().sum()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        if self.cols != other.rows {
            return Err(LinalgError::DimensionMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                let dst = out.row_mut(i);
                for (d, &b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self * x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.mul_vec_into(x, &mut out);
        out
    }

    pub fn mul_vec_into(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.cols);
        assert_eq!(out.len(), self.rows);
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(i), x);
        }
    }

    /// `self * x` for a lower-triangular `self`, skipping the zero upper part.
    pub fn lower_mul_vec_into(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.cols);
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(&self.row(i)[..=i], &x[..=i]);
        }
    }

    /// `selfᵀ * x`.
    pub fn transpose_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * xi;
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, &v| m.max(v.abs()))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Matrix { rows: self.rows, cols: self.cols, data }
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| v * s).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn is_lower_triangular(&self) -> bool {
        (0..self.rows).all(|i| ((i + 1)..self.cols).all(|j| self[(i, j)] == 0.0))
    }

    pub fn is_upper_triangular(&self) -> bool {
        (0..self.rows).all(|i| (0..i.min(self.cols)).all(|j| self[(i, j)] == 0.0))
    }

    /// `(A + Aᵀ) / 2`.
    pub fn symmetrized(&self) -> Matrix {
        let mut out = self.clone();
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let v = 0.5 * (self[(i, j)] + self[(j, i)]);
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        out
    }

    /// Adds `1e-10 * trace / d` to the diagonal.
    pub fn regularized(&self) -> Matrix {
        let n = self.rows.max(1) as f64;
        let jitter = 1e-10 * self.trace() / n;
        let mut out = self.clone();
        for i in 0..self.rows.min(self.cols) {
            out[(i, i)] += jitter;
        }
        out
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_symmetric(sigma: &Matrix) -> Result<(), LinalgError> {
    if !sigma.is_square() {
        return Err(LinalgError::DimensionMismatch(format!(
            "expected a square matrix, got {}x{}",
            sigma.rows(),
            sigma.cols()
        )));
    }
    if !sigma.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    let tol = 1e-10 * sigma.max_abs();
    for i in 0..sigma.rows() {
        for j in (i + 1)..sigma.cols() {
            let diff = (sigma[(i, j)] - sigma[(j, i)]).abs();
            if diff > tol {
                return Err(LinalgError::NotSymmetric { row: i, col: j, diff });
            }
        }
    }
    Ok(())
}

/// Lower Cholesky factor `L` with `L Lᵀ = sigma` and a strictly positive diagonal.
///
/// The input is symmetrized as `(A + Aᵀ)/2` before factoring, after checking that
/// it is symmetric to within `1e-10 * max|entry|`.
pub fn cholesky_lower(sigma: &Matrix) -> Result<Matrix, LinalgError> {
    check_symmetric(sigma)?;
    let a = sigma.symmetrized();
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let lj = &l.row(j)[..j];
        let pivot = a[(j, j)] - dot(lj, lj);
        if !(pivot > 0.0) || !pivot.is_finite() {
            return Err(LinalgError::NotPositiveDefinite { pivot: j, value: pivot });
        }
        let djj = pivot.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let s = a[(i, j)] - dot(&l.row(i)[..j], &l.row(j)[..j]);
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

/// Solves `L x = b` for lower-triangular `L`.
pub fn solve_lower(l: &Matrix, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
    let mut x = b.to_vec();
    solve_lower_in_place(l, &mut x)?;
    Ok(x)
}

/// Solves `U x = b` for upper-triangular `U`.
pub fn solve_upper(u: &Matrix, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
    let mut x = b.to_vec();
    solve_upper_in_place(u, &mut x)?;
    Ok(x)
}

pub fn solve_lower_in_place(l: &Matrix, x: &mut [f64]) -> Result<(), LinalgError> {
    check_triangular_dims(l, x.len())?;
    for i in 0..x.len() {
        let d = l[(i, i)];
        if d == 0.0 || !d.is_finite() {
            return Err(LinalgError::SingularTriangular { index: i });
        }
        let s = x[i] - dot(&l.row(i)[..i], &x[..i]);
        x[i] = s / d;
    }
    Ok(())
}

pub fn solve_upper_in_place(u: &Matrix, x: &mut [f64]) -> Result<(), LinalgError> {
    check_triangular_dims(u, x.len())?;
    let n = x.len();
    for i in (0..n).rev() {
        let d = u[(i, i)];
        if d == 0.0 || !d.is_finite() {
            return Err(LinalgError::SingularTriangular { index: i });
        }
        let s = x[i] - dot(&u.row(i)[(i + 1)..], &x[(i + 1)..]);
        x[i] = s / d;
    }
    Ok(())
}

/// Solves `Lᵀ x = b` using the lower factor `L` without forming the transpose.
pub fn solve_lower_transpose_in_place(l: &Matrix, x: &mut [f64]) -> Result<(), LinalgError> {
    check_triangular_dims(l, x.len())?;
    let n = x.len();
    for i in (0..n).rev() {
        let d = l[(i, i)];
        if d == 0.0 || !d.is_finite() {
            return Err(LinalgError::SingularTriangular { index: i });
        }
        x[i] /= d;
        let xi = x[i];
        for k in 0..i {
            x[k] -= l[(i, k)] * xi;
        }
    }
    Ok(())
}

fn check_triangular_dims(t: &Matrix, n: usize) -> Result<(), LinalgError> {
    if t.rows() != n || t.cols() != n {
        return Err(LinalgError::DimensionMismatch(format!(
            "{}x{} triangular system with rhs of length {n}",
            t.rows(),
            t.cols()
        )));
    }
    Ok(())
}

/// Inverse of an SPD matrix through its Cholesky factor.
pub fn invert_spd(sigma: &Matrix) -> Result<Matrix, LinalgError> {
    let l = cholesky_lower(sigma)?;
    invert_from_cholesky(&l)
}

/// `(L Lᵀ)⁻¹` given the lower factor `L`.
pub fn invert_from_cholesky(l: &Matrix) -> Result<Matrix, LinalgError> {
    let n = l.rows();
    let mut inv = Matrix::zeros(n, n);
    let mut col = vec![0.0; n];
    for j in 0..n {
        col.iter_mut().for_each(|v| *v = 0.0);
        col[j] = 1.0;
        solve_lower_in_place(l, &mut col)?;
        solve_lower_transpose_in_place(l, &mut col)?;
        for i in 0..n {
            inv[(i, j)] = col[i];
        }
    }
    Ok(inv.symmetrized())
}

/// Partition of a parameter vector into consecutive blocks.
///
/// For GLMMs the first `n` blocks are the random effects `ξ_1..ξ_n` and the
/// final block holds the shared parameters `η = (β, ζ)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPartition {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
}

impl BlockPartition {
    pub fn new(sizes: Vec<usize>) -> Result<Self, LinalgError> {
        if sizes.is_empty() || sizes.contains(&0) {
            return Err(LinalgError::DimensionMismatch(
                "block sizes must be non-empty and all at least 1".into(),
            ));
        }
        let mut offsets = Vec::with_capacity(sizes.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for &s in &sizes {
            acc += s;
            offsets.push(acc);
        }
        Ok(Self { sizes, offsets })
    }

    /// `n` equal random-effect blocks of size `r` followed by one shared block.
    pub fn random_effects(n: usize, r: usize, shared: usize) -> Result<Self, LinalgError> {
        let mut sizes = vec![r; n];
        sizes.push(shared);
        Self::new(sizes)
    }

    pub fn single(dim: usize) -> Result<Self, LinalgError> {
        Self::new(vec![dim])
    }

    pub fn num_blocks(&self) -> usize {
        self.sizes.len()
    }

    /// Number of random-effect blocks (all but the last).
    pub fn num_local(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn size(&self, block: usize) -> usize {
        self.sizes[block]
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn range(&self, block: usize) -> std::ops::Range<usize> {
        self.offsets[block]..self.offsets[block + 1]
    }

    pub fn shared_range(&self) -> std::ops::Range<usize> {
        self.range(self.sizes.len() - 1)
    }

    pub fn block_of(&self, index: usize) -> usize {
        match self.offsets.binary_search(&index) {
            Ok(b) => b,
            Err(b) => b - 1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, rng: &mut impl Rng) -> Matrix {
        let a =
            Matrix::from_row_major(n, n, (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let mut s = a.matmul(&a.transpose()).unwrap();
        for i in 0..n {
            s[(i, i)] += 1.0;
        }
        s
    }

    #[test]
    fn cholesky_identity() {
        let l = cholesky_lower(&Matrix::identity(3)).unwrap();
        assert_eq!(l, Matrix::identity(3));
    }

    #[test]
    fn cholesky_fig2_covariance() {
        let sigma = Matrix::from_rows(&[[1.0, 1.8], [1.8, 4.0]]);
        let l = cholesky_lower(&sigma).unwrap();
        assert!((l[(0, 0)] - 1.0).abs() < 1e-12);
        assert_eq!(l[(0, 1)], 0.0);
        assert!((l[(1, 0)] - 1.8).abs() < 1e-12);
        assert!((l[(1, 1)] - 0.8718).abs() < 5e-5);
        let back = l.matmul(&l.transpose()).unwrap();
        assert!(back.sub(&sigma).frobenius_norm() / sigma.frobenius_norm() < 1e-12);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let sigma = Matrix::from_rows(&[[1.0, 2.0], [2.0, 1.0]]);
        match cholesky_lower(&sigma) {
            Err(LinalgError::NotPositiveDefinite { pivot, .. }) => assert_eq!(pivot, 1),
            other => panic!("expected NotPositiveDefinite, got {other:?}"),
        }
    }

    #[test]
    fn cholesky_rejects_asymmetric() {
        let sigma = Matrix::from_rows(&[[1.0, 0.5], [0.4, 1.0]]);
        assert!(matches!(cholesky_lower(&sigma), Err(LinalgError::NotSymmetric { .. })));
    }

    #[test]
    fn invert_diagonal() {
        let inv = invert_spd(&Matrix::from_diagonal(&[4.0, 9.0])).unwrap();
        assert!((inv[(0, 0)] - 0.25).abs() < 1e-15);
        assert!((inv[(1, 1)] - 1.0 / 9.0).abs() < 1e-15);
        assert_eq!(inv[(0, 1)], 0.0);
        assert_eq!(invert_spd(&Matrix::identity(2)).unwrap(), Matrix::identity(2));
    }

    #[test]
    fn invert_random_spd_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = random_spd(5, &mut rng);
        let inv = invert_spd(&s).unwrap();
        let r = inv.matmul(&s).unwrap().sub(&Matrix::identity(5));
        assert!(r.max_abs() < 1e-6, "residual {}", r.max_abs());
    }

    #[test]
    fn triangular_solves_by_hand() {
        assert_eq!(solve_lower(&Matrix::identity(2), &[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
        let l = Matrix::from_rows(&[[2.0, 0.0], [1.0, 1.0]]);
        assert_eq!(solve_lower(&l, &[2.0, 2.0]).unwrap(), vec![1.0, 1.0]);
        let u = l.transpose();
        // [[2,1],[0,1]] x = (3, 1) -> x = (1, 1)
        assert_eq!(solve_upper(&u, &[3.0, 1.0]).unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn triangular_solve_random_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let l = cholesky_lower(&random_spd(10, &mut rng)).unwrap();
        let b: Vec<f64> = (0..10).map(|_| rng.random_range(-3.0..3.0)).collect();
        let x = solve_lower(&l, &b).unwrap();
        let r = l.mul_vec(&x);
        let num: f64 = r.iter().zip(&b).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(num / den < 1e-10);

        let mut y = b.clone();
        solve_lower_transpose_in_place(&l, &mut y).unwrap();
        let r2 = l.transpose().mul_vec(&y);
        for (a, b) in r2.iter().zip(&b) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn singular_triangular_detected() {
        let l = Matrix::from_rows(&[[1.0, 0.0], [1.0, 0.0]]);
        assert_eq!(solve_lower(&l, &[1.0, 1.0]), Err(LinalgError::SingularTriangular { index: 1 }));
    }

    #[test]
    fn partition_offsets() {
        let p = BlockPartition::random_effects(3, 2, 4).unwrap();
        assert_eq!(p.dim(), 10);
        assert_eq!(p.num_local(), 3);
        assert_eq!(p.range(1), 2..4);
        assert_eq!(p.shared_range(), 6..10);
        assert_eq!(p.block_of(0), 0);
        assert_eq!(p.block_of(3), 1);
        assert_eq!(p.block_of(9), 3);
        assert!(BlockPartition::new(vec![1, 0]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn cholesky_reconstructs(seed in any::<u64>(), n in 1usize..12) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let s = random_spd(n, &mut rng);
                let l = cholesky_lower(&s).unwrap();
                prop_assert!(l.is_lower_triangular());
                prop_assert!(l.diagonal().iter().all(|&d| d > 0.0));
                let back = l.matmul(&l.transpose()).unwrap();
                prop_assert!(back.sub(&s).frobenius_norm() / s.frobenius_norm() < 1e-8);
            }

            #[test]
            fn inverse_is_inverse(seed in any::<u64>(), n in 1usize..10) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let s = random_spd(n, &mut rng);
                let inv = invert_spd(&s).unwrap();
                let r = inv.matmul(&s).unwrap().sub(&Matrix::identity(n));
                prop_assert!(r.max_abs() < 1e-6);
            }

            #[test]
            fn solve_recovers_x(seed in any::<u64>(), n in 1usize..15) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let l = cholesky_lower(&random_spd(n, &mut rng)).unwrap();
                let x: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
                let b = l.mul_vec(&x);
                let got = solve_lower(&l, &b).unwrap();
                for (g, e) in got.iter().zip(&x) {
                    prop_assert!((g - e).abs() < 1e-9);
                }
            }
        }
    }
}
