use rayon::prelude::*;

use super::KernelParams;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

#[inline]
pub(crate) fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

#[inline]
fn rbf_from_sq<T: Scalar>(d2: T, params: &KernelParams) -> T {
    let l = T::c(params.lengthscale);
    T::c(params.signal_variance) * (-d2 / (T::c(2.0) * l * l)).exp()
}

/// `sv · exp(−‖x1−x2‖² / 2ℓ²)`.
pub fn rbf_kernel<T: Scalar>(x1: &[T], x2: &[T], params: &KernelParams) -> Result<T> {
    if x1.len() != x2.len() {
        return Err(Error::Shape(format!(
            "kernel inputs have dimensions {} and {}",
            x1.len(),
            x2.len()
        )));
    }
    Ok(rbf_from_sq(sq_dist(x1, x2), params))
}

/// Cross-covariance between the rows of `x` and `x2`.
pub fn gram<T: Scalar>(x: &Matrix<T>, x2: &Matrix<T>, params: &KernelParams) -> Result<Matrix<T>> {
    if std::ptr::eq(x, x2) {
        return gram_self(x, params);
    }
    if x.cols() != x2.cols() {
        return Err(Error::Shape(format!(
            "feature dimensions {} and {} differ",
            x.cols(),
            x2.cols()
        )));
    }
    let (n, m) = (x.rows(), x2.rows());
    let mut data = vec![T::zero(); n * m];
    data.par_chunks_mut(m.max(1))
        .enumerate()
        .take(n)
        .for_each(|(i, row)| {
            for (j, v) in row.iter_mut().enumerate() {
                *v = rbf_from_sq(sq_dist(x.row(i), x2.row(j)), params);
            }
        });
    Matrix::from_row_major(n, m, data)
}

/// `K(X, X)`, computed on the upper triangle and mirrored so it is exactly
/// symmetric.
pub fn gram_self<T: Scalar>(x: &Matrix<T>, params: &KernelParams) -> Result<Matrix<T>> {
    let n = x.rows();
    let sv = T::c(params.signal_variance);
    let upper: Vec<Vec<T>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i + 1..n)
                .map(|j| rbf_from_sq(sq_dist(x.row(i), x.row(j)), params))
                .collect()
        })
        .collect();
    let mut k = Matrix::zeros(n, n);
    for (i, row) in upper.iter().enumerate() {
        k[(i, i)] = sv;
        for (off, &v) in row.iter().enumerate() {
            let j = i + 1 + off;
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// `K_a = K(X, X) + σ_a² I`.
pub fn latent_covariance<T: Scalar>(x: &Matrix<T>, params: &KernelParams) -> Result<Matrix<T>> {
    let mut k = gram_self(x, params)?;
    k.add_diagonal(T::c(params.latent_noise));
    Ok(k)
}

/// Median Euclidean distance over distinct row pairs; `None` with fewer than
/// two rows.
pub fn median_pairwise_distance<T: Scalar>(x: &Matrix<T>) -> Option<f64> {
    let n = x.rows();
    if n < 2 {
        return None;
    }
    let mut d: Vec<f64> = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            d.push(sq_dist(x.row(i), x.row(j)).as_f64().sqrt());
        }
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    Some(if m % 2 == 1 {
        d[m / 2]
    } else {
        0.5 * (d[m / 2 - 1] + d[m / 2])
    })
}

/// Chain rule from `∂L/∂K` (symmetric) to the feature rows that produced the
/// RBF part of `K`: `∂L/∂x_i = 2 Σ_j G_ij K_ij (x_j − x_i) / ℓ²`.
pub fn rbf_feature_gradient<T: Scalar>(
    x: &Matrix<T>,
    k_rbf: &Matrix<T>,
    dk: &Matrix<T>,
    params: &KernelParams,
) -> Matrix<T> {
    let (n, d) = (x.rows(), x.cols());
    let l2 = T::c(params.lengthscale * params.lengthscale);
    let two = T::c(2.0);
    let mut out = Matrix::zeros(n, d);
    for i in 0..n {
        let xi = x.row(i);
        let mut acc = vec![T::zero(); d];
        for j in 0..n {
            if j == i {
                continue;
            }
            let s = two * dk[(i, j)] * k_rbf[(i, j)] / l2;
            for (a, (&xj, &xi)) in acc.iter_mut().zip(x.row(j).iter().zip(xi)) {
                *a += s * (xj - xi);
            }
        }
        for (c, v) in acc.into_iter().enumerate() {
            out[(i, c)] = v;
        }
    }
    out
}
