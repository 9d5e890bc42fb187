//! Gaussian-process regression and Laplace-approximated binary classification
//! with an RBF kernel.

pub mod kernel;
pub mod laplace;
pub mod model;
pub mod regression;

pub use kernel::{
    gram, gram_self, latent_covariance, median_pairwise_distance, rbf_feature_gradient, rbf_kernel,
};
pub use laplace::{
    evidence_gradient_k, laplace_log_marginal, laplace_mode, laplace_predict, probit_predictive,
    LaplaceOptions, LaplacePredictor, LaplaceState,
};
pub use model::{fit_kernel, gp_classify, GpClassifier, KernelFitOptions};
pub use regression::{gp_regression_posterior, RegressionPosterior};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    #[default]
    Rbf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub kind: KernelKind,
    pub lengthscale: f64,
    pub signal_variance: f64,
    /// Constant prior mean of the latent function.
    pub prior_mean: f64,
    /// σ_a², added to the latent covariance of the classifier.
    pub latent_noise: f64,
    /// σ_Y², regression only.
    pub observation_noise: f64,
}

impl Default for KernelParams {
    fn default() -> Self {
        KernelParams {
            kind: KernelKind::Rbf,
            lengthscale: 1.0,
            signal_variance: 1.0,
            prior_mean: 0.0,
            latent_noise: 1e-6,
            observation_noise: 0.0,
        }
    }
}

impl KernelParams {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite();
        if !(ok(self.lengthscale) && self.lengthscale > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "lengthscale must be positive, got {}",
                self.lengthscale
            )));
        }
        if !(ok(self.signal_variance) && self.signal_variance > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "signal_variance must be positive, got {}",
                self.signal_variance
            )));
        }
        if !ok(self.prior_mean) {
            return Err(Error::InvalidArgument("prior_mean must be finite".into()));
        }
        for (name, v) in [
            ("latent_noise", self.latent_noise),
            ("observation_noise", self.observation_noise),
        ] {
            if !(ok(v) && v >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be nonnegative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Latent moments and class probability at one test point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpPrediction<T> {
    pub latent_mean: T,
    pub latent_variance: T,
    /// Probability of class 1.
    pub class_probability: T,
}

/// Feature rows with one target per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFeatures<T> {
    pub features: Matrix<T>,
    pub targets: Vec<T>,
}

impl<T: Scalar> LabeledFeatures<T> {
    pub fn new(features: Matrix<T>, targets: Vec<T>) -> Result<Self> {
        if features.rows() != targets.len() {
            return Err(Error::Shape(format!(
                "{} feature rows but {} targets",
                features.rows(),
                targets.len()
            )));
        }
        Ok(LabeledFeatures { features, targets })
    }

    /// Like [`LabeledFeatures::new`] but also requires every target in {0, 1}.
    pub fn binary(features: Matrix<T>, targets: Vec<T>) -> Result<Self> {
        check_binary(&targets)?;
        Self::new(features, targets)
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

pub(crate) fn check_binary<T: Scalar>(t: &[T]) -> Result<()> {
    match t.iter().position(|&v| v != T::zero() && v != T::one()) {
        Some(i) => Err(Error::InvalidArgument(format!(
            "target {i} is {}, expected 0 or 1",
            t[i]
        ))),
        None => Ok(()),
    }
}
