//! Dense symmetric-positive-definite linear algebra.
//!
//! The models here never exceed a few hundred sites, so a plain row-major
//! matrix with an unblocked Cholesky is both sufficient and easy to audit.

use crate::error::{Error, Result};
use crate::numerics::math::{fabs, ln, sqrt};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
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

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::DimensionMismatch("ragged rows".into()));
        }
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            data.extend_from_slice(row);
        }
        Ok(Self { rows: r, cols: c, data })
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
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
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::DimensionMismatch(format!(
                "matrix has {} columns, vector has {}",
                self.cols,
                x.len()
            )));
        }
        let mut out = vec![0.0; self.rows];
        for i in 0..self.rows {
            let row = self.row(i);
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x) {
                acc += a * b;
            }
            out[i] = acc;
        }
        Ok(out)
    }

    /// Maximum |a_ij − a_ji| over all pairs.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in 0..i {
                let d = fabs(self[(i, j)] - self[(j, i)]);
                if d > worst {
                    worst = d;
                }
            }
        }
        worst
    }
}

impl core::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl core::ops::IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// A symmetric positive definite matrix with its cached Cholesky factor.
///
/// Construction is the positive-definiteness certificate: it fails if the
/// input is asymmetric beyond 1e-12 (relative) or any pivot is non-positive.
/// Instances are immutable afterwards and safe to share across threads.
#[derive(Debug, Clone)]
pub struct SpdMatrix {
    mat: Matrix,
    chol: Matrix,
}

impl SpdMatrix {
    /// Factor a symmetric matrix, reporting the failing pivot if not PD.
    pub fn cholesky(mat: Matrix) -> Result<Self> {
        let n = mat.rows();
        if mat.cols() != n {
            return Err(Error::DimensionMismatch(format!(
                "Cholesky needs a square matrix, got {}x{}",
                mat.rows(),
                mat.cols()
            )));
        }
        let mut scale = 0.0f64;
        for v in mat.data() {
            if !v.is_finite() {
                return Err(Error::NonFinite("matrix entry".into()));
            }
            if fabs(*v) > scale {
                scale = fabs(*v);
            }
        }
        if mat.asymmetry() > 1e-12 * (1.0 + scale) {
            return Err(Error::InvalidParameter("matrix is not symmetric".into()));
        }

        let mut l = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let mut sum = mat[(i, j)];
                for k in 0..j {
                    sum -= l[(i, k)] * l[(j, k)];
                }
                if i == j {
                    if !(sum > 0.0) {
                        return Err(Error::NotPositiveDefinite { pivot: i });
                    }
                    l[(i, j)] = sqrt(sum);
                } else {
                    l[(i, j)] = sum / l[(j, j)];
                }
            }
        }
        Ok(Self { mat, chol: l })
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.mat.rows()
    }

    #[inline]
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.mat[(i, j)]
    }

    pub fn matrix(&self) -> &Matrix {
        &self.mat
    }

    /// The lower-triangular factor L with L·Lᵀ equal to the matrix.
    pub fn factor(&self) -> &Matrix {
        &self.chol
    }

    /// Solve L y = b.
    pub fn solve_lower(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.order();
        if b.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "matrix order {n}, vector length {}",
                b.len()
            )));
        }
        let mut y = b.to_vec();
        for i in 0..n {
            let mut sum = y[i];
            for k in 0..i {
                sum -= self.chol[(i, k)] * y[k];
            }
            y[i] = sum / self.chol[(i, i)];
        }
        Ok(y)
    }

    /// Solve M x = b through the factor.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.order();
        let mut x = self.solve_lower(b)?;
        for i in (0..n).rev() {
            let mut sum = x[i];
            for k in (i + 1)..n {
                sum -= self.chol[(k, i)] * x[k];
            }
            x[i] = sum / self.chol[(i, i)];
        }
        Ok(x)
    }

    /// log det M from the factor diagonal.
    pub fn logdet(&self) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.order() {
            acc += ln(self.chol[(i, i)]);
        }
        2.0 * acc
    }

    /// Quadratic form xᵀ M⁻¹ x (one triangular solve).
    pub fn inv_quad_form(&self, x: &[f64]) -> Result<f64> {
        let y = self.solve_lower(x)?;
        Ok(y.iter().map(|v| v * v).sum())
    }

    /// Dense inverse (used only for gradient traces; O(n³)).
    pub fn inverse(&self) -> Result<Matrix> {
        let n = self.order();
        let mut inv = Matrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = self.solve(&e)?;
            e[j] = 0.0;
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        Ok(inv)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}
