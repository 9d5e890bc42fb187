use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::FeatureGpModel;
use super::split::Split;
use super::{accuracy, kernel_digest, Metrics};
use crate::error::{Error, Result};
use crate::features::Extractor;
use crate::gp::{
    fit_kernel, GpClassifier, KernelFitOptions, KernelParams, LabeledFeatures, LaplaceOptions,
};
use crate::imagekit::{ImageTensor, LabeledImage, Preprocess};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Per-column z-scoring fitted on training features. Columns with
/// (near-)zero spread are centered but not scaled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    const MIN_STD: f64 = 1e-12;

    pub fn fit<T: Scalar>(x: &Matrix<T>) -> Result<Self> {
        let (n, d) = (x.rows(), x.cols());
        if n == 0 {
            return Err(Error::EmptySplit("cannot standardize zero rows".into()));
        }
        let mut mean = vec![0.0; d];
        let mut std = vec![0.0; d];
        for j in 0..d {
            let m = (0..n).map(|i| x[(i, j)].as_f64()).sum::<f64>() / n as f64;
            let v = (0..n)
                .map(|i| (x[(i, j)].as_f64() - m).powi(2))
                .sum::<f64>()
                / n as f64;
            mean[j] = m;
            std[j] = if v.sqrt() > Self::MIN_STD {
                v.sqrt()
            } else {
                1.0
            };
        }
        Ok(Standardizer { mean, std })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn transform<T: Scalar>(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        if x.cols() != self.len() {
            return Err(Error::Shape(format!(
                "standardizer fitted on {} columns, got {}",
                self.len(),
                x.cols()
            )));
        }
        Ok(Matrix::from_fn(x.rows(), x.cols(), |i, j| {
            T::c((x[(i, j)].as_f64() - self.mean[j]) / self.std[j])
        }))
    }
}

/// Descriptor rows for raw images after resize and center crop.
pub(crate) fn extract_matrix<T: Scalar>(
    images: &[&ImageTensor<T>],
    preprocess: &Preprocess,
    extractor: &Extractor,
) -> Result<Matrix<T>> {
    let rows: Vec<Vec<T>> = images
        .par_iter()
        .map(|img| Ok(extractor.extract(&preprocess.geometry(img)?)?.values))
        .collect::<Result<_>>()?;
    let d = extractor.feature_len();
    if let Some(bad) = rows.iter().find(|r| r.len() != d) {
        return Err(Error::Shape(format!(
            "extractor produced {} values, expected {d}",
            bad.len()
        )));
    }
    Matrix::from_row_major(rows.len(), d, rows.concat())
}

fn images<'a, T>(samples: &[&'a LabeledImage<T>]) -> Vec<&'a ImageTensor<T>> {
    samples.iter().map(|s| &s.image).collect()
}

/// Settings for a classical-descriptor GP run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureGpConfig {
    pub extractor: Extractor,
    pub gp: KernelParams,
    pub fit_kernel: bool,
    /// Side of the center crop the descriptors are computed on.
    pub input_size: usize,
    /// Recorded in the metrics; the run itself draws no random numbers.
    pub seed: u64,
    pub laplace_tol: f64,
    pub laplace_max_iter: usize,
}

impl FeatureGpConfig {
    pub fn new(extractor: Extractor) -> Self {
        FeatureGpConfig {
            extractor,
            gp: KernelParams::default(),
            fit_kernel: true,
            input_size: 32,
            seed: 0,
            laplace_tol: 1e-8,
            laplace_max_iter: 100,
        }
    }

    pub fn digest(&self) -> String {
        format!(
            "extractor={};fit_kernel={};input_size={};seed={};laplace_tol={};laplace_max_iter={};gp={}",
            serde_json::to_string(&self.extractor).expect("extractor serializes"),
            self.fit_kernel,
            self.input_size,
            self.seed,
            self.laplace_tol,
            self.laplace_max_iter,
            kernel_digest(&self.gp)
        )
    }
}

/// Extract descriptors once, z-score them on the training statistics, fit
/// the kernel (optionally) and the GP, and report both accuracies.
pub fn train_feature_gp<T: Scalar>(
    split: &Split<'_, T>,
    cfg: &FeatureGpConfig,
) -> Result<(FeatureGpModel<T>, Metrics)> {
    cfg.gp.validate()?;
    let preprocess = Preprocess::for_input_size(cfg.input_size);
    let raw_train = extract_matrix(&images(split.train.samples()), &preprocess, &cfg.extractor)?;
    let scaler = Standardizer::fit(&raw_train)?;
    let train_f = scaler.transform(&raw_train)?;
    let train_t = split.train.targets();
    let data = LabeledFeatures::new(train_f.clone(), train_t.clone())?;
    let laplace = LaplaceOptions {
        tol: cfg.laplace_tol,
        max_iter: cfg.laplace_max_iter,
        prior_mean: cfg.gp.prior_mean,
    };
    let kernel = if cfg.fit_kernel {
        fit_kernel(&data, &cfg.gp, &laplace, &KernelFitOptions::default())?.0
    } else {
        cfg.gp
    };
    let gp = GpClassifier::fit(&data, &kernel, &laplace)?;

    let probs = |f: &Matrix<T>| -> Result<Vec<T>> {
        Ok(gp
            .predict(f)?
            .into_iter()
            .map(|p| p.class_probability)
            .collect())
    };
    let train_accuracy = accuracy(&probs(&train_f)?, &train_t)?;
    let raw_test = extract_matrix(&images(split.test.samples()), &preprocess, &cfg.extractor)?;
    let test_accuracy = accuracy(
        &probs(&scaler.transform(&raw_test)?)?,
        &split.test.targets(),
    )?;

    let metrics = Metrics {
        model: format!("{}-gp", cfg.extractor.name()),
        seed: cfg.seed,
        config_digest: cfg.digest(),
        train_accuracy,
        test_accuracy,
        epochs: Vec::new(),
        skipped_batches: 0,
        last_batch_train_accuracy: None,
        wall_time_s: None,
    };
    Ok((
        FeatureGpModel {
            preprocess,
            extractor: cfg.extractor.clone(),
            scaler,
            gp,
        },
        metrics,
    ))
}
