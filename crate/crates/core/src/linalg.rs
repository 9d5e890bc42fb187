//! Small dense linear algebra: row-major matrices and Cholesky factorization.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn diag(values: &[T]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
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

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn add_diagonal(&mut self, v: T) {
        for i in 0..self.rows.min(self.cols) {
            self[(i, i)] += v;
        }
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.cols, "matvec dimension");
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `selfᵀ x`.
    pub fn tr_matvec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.rows, "tr_matvec dimension");
        let mut out = vec![T::zero(); self.cols];
        for (i, &xi) in x.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * xi;
            }
        }
        out
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul dimension");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.data[k * other.cols + j];
                }
            }
        }
        out
    }

    pub fn max_abs_asymmetry(&self) -> T {
        let mut worst = T::zero();
        for i in 0..self.rows {
            for j in 0..i {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }
}

impl<T> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub fn max_abs_diff<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .fold(T::zero(), |acc, (&x, &y)| acc.max((x - y).abs()))
}

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky<T> {
    lower: Matrix<T>,
    /// Diagonal increment that was needed for the factorization to succeed.
    jitter: T,
}

impl<T: Scalar> Cholesky<T> {
    /// Plain factorization; fails on a non-positive pivot.
    pub fn factor(a: &Matrix<T>) -> Option<Self> {
        Self::factor_shifted(a, T::zero())
    }

    fn factor_shifted(a: &Matrix<T>, shift: T) -> Option<Self> {
        assert!(a.is_square(), "cholesky of non-square matrix");
        let n = a.rows();
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)] + shift;
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > T::zero()) || !d.is_finite() {
                return None;
            }
            let d = d.sqrt();
            l[(j, j)] = d;
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / d;
            }
        }
        Some(Cholesky {
            lower: l,
            jitter: shift,
        })
    }

    /// Factorization under the jitter policy: start at `1e-10·scale` on the
    /// diagonal and escalate by ×10 up to `1e-4·scale`.
    pub fn factor_with_jitter(a: &Matrix<T>, scale: T) -> Result<Self> {
        let mut jitter = T::c(1e-10) * scale;
        let limit = T::c(1e-4) * scale * T::c(1.000001);
        loop {
            if let Some(c) = Self::factor_shifted(a, jitter) {
                return Ok(c);
            }
            jitter *= T::c(10.0);
            if jitter > limit {
                return Err(Error::Factorization {
                    jitter: (jitter / T::c(10.0)).as_f64(),
                });
            }
        }
    }

    /// Rebuild from a stored factor.
    pub fn from_lower(lower: Matrix<T>, jitter: T) -> Result<Self> {
        if !lower.is_square() {
            return Err(Error::Shape("cholesky factor must be square".into()));
        }
        Ok(Cholesky { lower, jitter })
    }

    pub fn lower(&self) -> &Matrix<T> {
        &self.lower
    }

    pub fn jitter(&self) -> T {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.lower.rows()
    }

    /// Solve `L y = b`.
    pub fn solve_lower(&self, b: &[T]) -> Vec<T> {
        let n = self.dim();
        let l = &self.lower;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= l[(i, k)] * y[k];
            }
            y[i] = s / l[(i, i)];
        }
        y
    }

    /// Solve `Lᵀ x = y`.
    pub fn solve_upper(&self, y: &[T]) -> Vec<T> {
        let n = self.dim();
        let l = &self.lower;
        let mut x = y.to_vec();
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..n {
                s -= l[(k, i)] * x[k];
            }
            x[i] = s / l[(i, i)];
        }
        x
    }

    /// Solve `A x = b`.
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        self.solve_upper(&self.solve_lower(b))
    }

    /// Solve `A X = B` column by column.
    pub fn solve_matrix(&self, b: &Matrix<T>) -> Matrix<T> {
        let bt = b.transpose();
        let mut out = Matrix::zeros(b.cols(), b.rows());
        for c in 0..b.cols() {
            let x = self.solve(bt.row(c));
            out.data[c * b.rows()..(c + 1) * b.rows()].copy_from_slice(&x);
        }
        out.transpose()
    }

    /// `log det A = 2 Σ log L_ii`.
    pub fn log_det(&self) -> T {
        let two = T::c(2.0);
        (0..self.dim()).map(|i| self.lower[(i, i)].ln()).sum::<T>() * two
    }

    /// Explicit inverse, used only where a full matrix is needed (gradients).
    pub fn inverse(&self) -> Matrix<T> {
        self.solve_matrix(&Matrix::identity(self.dim()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factors_known_matrix() {
        let a = Matrix::from_row_major(2, 2, vec![4.0, 2.0, 2.0, 3.0]).unwrap();
        let c = Cholesky::factor(&a).unwrap();
        assert_eq!(c.lower()[(0, 0)], 2.0);
        assert_eq!(c.lower()[(1, 0)], 1.0);
        assert!((c.lower()[(1, 1)] - 2f64.sqrt()).abs() < 1e-15);
        let x = c.solve(&[2.0, 1.0]);
        let back = a.matvec(&x);
        assert!(max_abs_diff(&back, &[2.0, 1.0]) < 1e-14);
        assert!((c.log_det() - 8f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn jitter_rescues_singular_matrix() {
        let a = Matrix::from_row_major(2, 2, vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        assert!(Cholesky::factor(&a).is_none());
        let c = Cholesky::factor_with_jitter(&a, 1.0).unwrap();
        assert!(c.jitter() > 0.0 && c.jitter() <= 1e-4);
    }

    #[test]
    fn jitter_gives_up_on_indefinite_matrix() {
        let a = Matrix::from_row_major(2, 2, vec![1.0, 0.0, 0.0, -1.0]).unwrap();
        assert!(matches!(
            Cholesky::factor_with_jitter(&a, 1.0),
            Err(Error::Factorization { .. })
        ));
    }

    #[test]
    fn inverse_times_matrix_is_identity() {
        let a = Matrix::from_row_major(3, 3, vec![5.0, 1.0, 0.5, 1.0, 4.0, 0.2, 0.5, 0.2, 3.0])
            .unwrap();
        let inv = Cholesky::factor(&a).unwrap().inverse();
        let id = a.matmul(&inv);
        assert!(max_abs_diff(id.as_slice(), Matrix::identity(3).as_slice()) < 1e-14);
    }
}
