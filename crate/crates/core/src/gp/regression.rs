use super::kernel::{gram, gram_self};
use super::{KernelParams, LabeledFeatures};
use crate::error::{Error, Result};
use crate::linalg::{Cholesky, Matrix};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionPosterior<T> {
    pub mean: Vec<T>,
    pub covariance: Matrix<T>,
    /// Diagonal jitter the factorization of `K_Y` needed.
    pub jitter: T,
}

/// Posterior of a GP with constant prior mean `μ` conditioned on noisy
/// observations: mean `μ + k_*ᵀK_Y⁻¹(y − μ)`, covariance `k_** − k_*ᵀK_Y⁻¹k_*`
/// with `K_Y = K + σ_Y² I`.
pub fn gp_regression_posterior<T: Scalar>(
    train: &LabeledFeatures<T>,
    test: &Matrix<T>,
    params: &KernelParams,
) -> Result<RegressionPosterior<T>> {
    params.validate()?;
    let mu = T::c(params.prior_mean);
    let k_ss = gram_self(test, params)?;
    if train.is_empty() {
        return Ok(RegressionPosterior {
            mean: vec![mu; test.rows()],
            covariance: k_ss,
            jitter: T::zero(),
        });
    }
    if train.features.cols() != test.cols() {
        return Err(Error::Shape(format!(
            "train features have {} columns, test {}",
            train.features.cols(),
            test.cols()
        )));
    }
    let mut k_y = gram_self(&train.features, params)?;
    k_y.add_diagonal(T::c(params.observation_noise));
    let chol = Cholesky::factor_with_jitter(&k_y, T::c(params.signal_variance))?;
    let k_s = gram(&train.features, test, params)?;

    let centered: Vec<T> = train.targets.iter().map(|&y| y - mu).collect();
    let alpha = chol.solve(&centered);
    let mean: Vec<T> = k_s.tr_matvec(&alpha).into_iter().map(|m| m + mu).collect();

    // V = L⁻¹ k_*, covariance = k_** − VᵀV.
    let kst = k_s.transpose();
    let v: Vec<Vec<T>> = (0..test.rows())
        .map(|j| chol.solve_lower(kst.row(j)))
        .collect();
    let n = test.rows();
    let mut cov = k_ss;
    for i in 0..n {
        for j in i..n {
            let c = cov[(i, j)] - crate::linalg::dot(&v[i], &v[j]);
            cov[(i, j)] = c;
            cov[(j, i)] = c;
        }
    }
    Ok(RegressionPosterior {
        mean,
        covariance: cov,
        jitter: chol.jitter(),
    })
}
