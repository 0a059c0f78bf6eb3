//! Small dense linear algebra kernel.
//!
//! Everything here works on row-major `f64` storage. The problem sizes in
//! this crate are tiny (6-state models, horizons of a few dozen steps, GP
//! Gram matrices of a few hundred points), so plain loops are fast enough
//! and keep the numerics bit-for-bit deterministic.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use crate::math::sqrt;

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_row_slice(rows: usize, cols: usize, data: &[f64]) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Self {
            rows,
            cols,
            data: data.to_vec(),
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn from_diag(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, v) in d.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
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

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                let dst = out.row_mut(i);
                for (d, o) in dst.iter_mut().zip(orow) {
                    *d += a * o;
                }
            }
        }
        out
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len(), "matvec dimension mismatch");
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `selfᵀ x`.
    pub fn tr_matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, x.len(), "tr_matvec dimension mismatch");
        let mut out = vec![0.0; self.cols];
        for (i, xi) in x.iter().enumerate() {
            axpy(*xi, self.row(i), &mut out);
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Mat) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| f64::max(m, (a - b).abs()))
    }

    pub fn symmetrize(&mut self) {
        assert_eq!(self.rows, self.cols);
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let v = 0.5 * (self[(i, j)] + self[(j, i)]);
                self[(i, j)] = v;
                self[(j, i)] = v;
            }
        }
    }

    /// Copy with row and column `k` removed (square matrices only).
    pub fn without_row_col(&self, k: usize) -> Mat {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        Mat::from_fn(n - 1, n - 1, |i, j| {
            let si = if i < k { i } else { i + 1 };
            let sj = if j < k { j } else { j + 1 };
            self[(si, sj)]
        })
    }

    /// Copy with row `k` removed.
    pub fn without_row(&self, k: usize) -> Mat {
        let mut data = Vec::with_capacity((self.rows - 1) * self.cols);
        for i in (0..self.rows).filter(|&i| i != k) {
            data.extend_from_slice(self.row(i));
        }
        Mat {
            rows: self.rows - 1,
            cols: self.cols,
            data,
        }
    }

    pub fn push_row(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.cols, "row length mismatch");
        self.data.extend_from_slice(row);
        self.rows += 1;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    sqrt(dot(a, a))
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| f64::max(m, v.abs()))
}

/// In-place lower Cholesky factorization. The strict upper triangle is zeroed.
/// On failure returns the index of the first non-positive pivot.
pub fn cholesky_in_place(a: &mut Mat) -> Result<(), usize> {
    assert_eq!(a.rows, a.cols, "cholesky of a non-square matrix");
    let n = a.rows;
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= a[(j, k)] * a[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(j);
        }
        let d = sqrt(d);
        a[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= a[(i, k)] * a[(j, k)];
            }
            a[(i, j)] = s / d;
        }
        for k in (j + 1)..n {
            a[(j, k)] = 0.0;
        }
    }
    Ok(())
}

/// Cholesky with diagonal jitter escalation: first tries the matrix as is,
/// then adds `start·scale`, growing ×10 until `max·scale`.
/// Returns the factor and the jitter that was added.
pub fn cholesky_jittered(a: &Mat, scale: f64, start: f64, max: f64) -> Option<(Mat, f64)> {
    let mut l = a.clone();
    if cholesky_in_place(&mut l).is_ok() {
        return Some((l, 0.0));
    }
    let mut rel = start;
    while rel <= max * (1.0 + 1e-12) {
        let jitter = rel * scale;
        let mut l = a.clone();
        for i in 0..l.rows {
            l[(i, i)] += jitter;
        }
        if cholesky_in_place(&mut l).is_ok() {
            return Some((l, jitter));
        }
        rel *= 10.0;
    }
    None
}

/// Solve `L x = b` in place.
pub fn forward_solve(l: &Mat, b: &mut [f64]) {
    let n = l.rows;
    debug_assert_eq!(b.len(), n);
    for i in 0..n {
        let row = l.row(i);
        let s = b[i] - dot(&row[..i], &b[..i]);
        b[i] = s / row[i];
    }
}

/// Solve `Lᵀ x = b` in place.
pub fn backward_solve_tr(l: &Mat, b: &mut [f64]) {
    let n = l.rows;
    debug_assert_eq!(b.len(), n);
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * b[k];
        }
        b[i] = s / l[(i, i)];
    }
}

/// Solve `(L Lᵀ) x = b` in place.
pub fn cholesky_solve(l: &Mat, b: &mut [f64]) {
    forward_solve(l, b);
    backward_solve_tr(l, b);
}

/// Error raised when a rank-1 downdate would destroy positive definiteness.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DowndateError;

/// In-place rank-1 modification of a lower Cholesky factor:
/// `L' L'ᵀ = L Lᵀ + sign · v vᵀ` with `sign = ±1`. `v` is clobbered.
pub fn cholesky_rank1(l: &mut Mat, v: &mut [f64], sign: f64) -> Result<(), DowndateError> {
    let n = l.rows;
    debug_assert_eq!(v.len(), n);
    for j in 0..n {
        let ljj = l[(j, j)];
        let vj = v[j];
        let arg = ljj * ljj + sign * vj * vj;
        if !(arg > 0.0) {
            return Err(DowndateError);
        }
        let r = sqrt(arg);
        let c = r / ljj;
        let s = vj / ljj;
        l[(j, j)] = r;
        for i in (j + 1)..n {
            let lij = (l[(i, j)] + sign * s * v[i]) / c;
            l[(i, j)] = lij;
            v[i] = c * v[i] - s * lij;
        }
    }
    Ok(())
}

/// Cholesky factor of `A` with row/column `k` deleted, computed from the
/// factor of `A` by one rank-1 update of the trailing block.
pub fn cholesky_delete(l: &Mat, k: usize) -> Mat {
    let n = l.rows;
    assert!(k < n);
    let mut out = l.without_row_col(k);
    let m = n - 1 - k;
    if m == 0 {
        return out;
    }
    let mut trailing = Mat::from_fn(m, m, |i, j| out[(k + i, k + j)]);
    let mut v: Vec<f64> = (0..m).map(|i| l[(k + 1 + i, k)]).collect();
    // an update (sign +1) cannot fail on a valid factor
    cholesky_rank1(&mut trailing, &mut v, 1.0).expect("rank-1 update of a valid factor");
    for i in 0..m {
        for j in 0..m {
            out[(k + i, k + j)] = trailing[(i, j)];
        }
    }
    out
}

/// Extend the factor of `A` to the factor of `[A a; aᵀ alpha]`.
/// Returns the new last row on success.
pub fn cholesky_append(l: &mut Mat, a: &[f64], alpha: f64) -> Result<Vec<f64>, DowndateError> {
    let n = l.rows;
    debug_assert_eq!(a.len(), n);
    let mut row = a.to_vec();
    forward_solve(l, &mut row);
    let d2 = alpha - dot(&row, &row);
    if !(d2 > 0.0) {
        return Err(DowndateError);
    }
    row.push(sqrt(d2));
    let mut grown = Mat::zeros(n + 1, n + 1);
    for i in 0..n {
        grown.row_mut(i)[..n].copy_from_slice(&l.row(i)[..n]);
    }
    grown.row_mut(n).copy_from_slice(&row);
    *l = grown;
    Ok(row)
}

/// `L Lᵀ`.
pub fn lower_gram(l: &Mat) -> Mat {
    let n = l.rows;
    Mat::from_fn(n, n, |i, j| {
        let m = i.min(j) + 1;
        dot(&l.row(i)[..m], &l.row(j)[..m])
    })
}

/// Largest eigenvalue of a symmetric 2×2 matrix `[a b; b c]`, closed form.
pub fn lambda_max_2x2(a: f64, b: f64, c: f64) -> f64 {
    let mean = 0.5 * (a + c);
    let half_diff = 0.5 * (a - c);
    mean + sqrt(half_diff * half_diff + b * b)
}

/// Symmetric eigen-decomposition by cyclic Jacobi rotations.
/// Returns eigenvalues and the column-eigenvector matrix.
pub fn symmetric_eigen(a: &Mat) -> (Vec<f64>, Mat) {
    assert_eq!(a.rows, a.cols);
    let n = a.rows;
    let mut m = a.clone();
    let mut v = Mat::identity(n);
    for _sweep in 0..64 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[(i, j)] * m[(i, j)];
            }
        }
        if off <= 1e-30 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + sqrt(theta * theta + 1.0));
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| m[(i, i)]).collect(), v)
}

/// Symmetrize and floor the eigenvalues of `a` at zero.
pub fn psd_clamp(a: &mut Mat) {
    a.symmetrize();
    let (vals, vecs) = symmetric_eigen(a);
    if vals.iter().all(|&v| v >= 0.0) {
        return;
    }
    let n = a.rows;
    *a = Mat::from_fn(n, n, |i, j| {
        (0..n)
            .map(|k| vals[k].max(0.0) * vecs[(i, k)] * vecs[(j, k)])
            .sum()
    });
    a.symmetrize();
}

/// Dense LU solve with partial pivoting; used by test oracles and small
/// KKT systems. Returns `None` for singular systems.
pub fn lu_solve(a: &Mat, b: &[f64]) -> Option<Vec<f64>> {
    let n = a.rows;
    assert_eq!(a.cols, n);
    let mut m = a.clone();
    let mut x = b.to_vec();
    for col in 0..n {
        let (piv, pval) = (col..n)
            .map(|r| (r, m[(r, col)].abs()))
            .fold((col, -1.0), |acc, it| if it.1 > acc.1 { it } else { acc });
        if !(pval > 1e-300) {
            return None;
        }
        if piv != col {
            for j in 0..n {
                let t = m[(col, j)];
                m[(col, j)] = m[(piv, j)];
                m[(piv, j)] = t;
            }
            x.swap(col, piv);
        }
        let d = m[(col, col)];
        for r in (col + 1)..n {
            let f = m[(r, col)] / d;
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                m[(r, j)] -= f * m[(col, j)];
            }
            x[r] -= f * x[col];
        }
    }
    for i in (0..n).rev() {
        let mut s = x[i];
        for j in (i + 1)..n {
            s -= m[(i, j)] * x[j];
        }
        x[i] = s / m[(i, i)];
    }
    Some(x)
}
