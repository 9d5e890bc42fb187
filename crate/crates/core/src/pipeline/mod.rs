//! Dataset splitting, joint CNN + GP training, classical-feature baselines,
//! evaluation and report export.

mod classical;
mod control;
mod joint;
mod model;
mod split;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cnn::NetworkConfig;
use crate::error::{Error, Result};
use crate::gp::{KernelParams, LaplaceOptions};
use crate::imagekit::LabeledImage;
use crate::scalar::Scalar;

pub use classical::{train_feature_gp, FeatureGpConfig, Standardizer};
pub use control::train_softmax_control;
pub use joint::{
    train_densenet_gp, train_joint, DenseNetBackbone, FeatureBackbone, JointOutcome, LinearBackbone,
};
pub use model::{DenseGpModel, FeatureGpModel, TrainedModel, MODEL_MANIFEST};
pub use split::{split_dataset, Split, SplitPolicy, TestSet, TrainSet};

/// Settings for joint DenseNet-GP training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Clamped to the training-set size.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub network: NetworkConfig,
    /// Starting kernel; lengthscale and signal variance are refitted when
    /// `fit_kernel` is set.
    pub gp: KernelParams,
    /// Refit the kernel on full-training-set features every this many
    /// epochs; 0 refits only before the first and after the last epoch.
    pub refit_gp_every: usize,
    pub fit_kernel: bool,
    /// Random flips on training batches.
    pub augment: bool,
    pub laplace_tol: f64,
    pub laplace_max_iter: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 128,
            learning_rate: 0.001,
            weight_decay: 0.001,
            seed: 0,
            network: NetworkConfig::default(),
            gp: KernelParams::default(),
            refit_gp_every: 5,
            fit_kernel: true,
            augment: true,
            laplace_tol: 1e-8,
            laplace_max_iter: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "batch_size must be at least 1".into(),
            ));
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("weight_decay", self.weight_decay),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        if !(self.laplace_tol.is_finite() && self.laplace_tol > 0.0) || self.laplace_max_iter == 0 {
            return Err(Error::InvalidArgument(
                "laplace_tol must be positive and laplace_max_iter at least 1".into(),
            ));
        }
        self.network.validate()?;
        self.gp.validate()
    }

    pub fn laplace_options(&self) -> LaplaceOptions {
        LaplaceOptions {
            tol: self.laplace_tol,
            max_iter: self.laplace_max_iter,
            prior_mean: self.gp.prior_mean,
        }
    }

    /// Canonical one-line rendering of every setting that affects results.
    pub fn digest(&self) -> String {
        format!(
            "epochs={};batch={};lr={};wd={};seed={};refit_gp_every={};fit_kernel={};augment={};\
             laplace_tol={};laplace_max_iter={};network={};gp={}",
            self.epochs,
            self.batch_size,
            self.learning_rate,
            self.weight_decay,
            self.seed,
            self.refit_gp_every,
            self.fit_kernel,
            self.augment,
            self.laplace_tol,
            self.laplace_max_iter,
            self.network.describe(),
            kernel_digest(&self.gp),
        )
    }
}

pub(crate) fn kernel_digest(p: &KernelParams) -> String {
    format!(
        "rbf(lengthscale={},signal_variance={},prior_mean={},latent_noise={},observation_noise={})",
        p.lengthscale, p.signal_variance, p.prior_mean, p.latent_noise, p.observation_noise
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean negative log evidence per training sample over the epoch's
    /// batches; `None` when every batch was skipped.
    pub loss: Option<f64>,
    pub train_acc: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub model: String,
    pub seed: u64,
    pub config_digest: String,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub epochs: Vec<EpochRecord>,
    pub skipped_batches: usize,
    /// Training accuracy of a GP fitted only on the last batch's final
    /// features, for comparison with the full refit.
    pub last_batch_train_accuracy: Option<f64>,
    /// Left unset by the library so reports stay byte-reproducible.
    pub wall_time_s: Option<f64>,
}

/// Accuracy over `probabilities` against `0`/`1` targets; `p ≥ 0.5` counts as
/// class 1.
pub fn accuracy<T: Scalar>(probabilities: &[T], targets: &[T]) -> Result<f64> {
    if probabilities.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} targets",
            probabilities.len(),
            targets.len()
        )));
    }
    if targets.is_empty() {
        return Err(Error::EmptySplit("no samples to evaluate".into()));
    }
    let half = T::c(0.5);
    let correct = probabilities
        .iter()
        .zip(targets)
        .filter(|(&p, &t)| (p >= half) == (t >= half))
        .count();
    Ok(correct as f64 / targets.len() as f64)
}

/// Per-sample outcome of [`evaluate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub probabilities: Vec<f64>,
}

/// Class-1 probabilities for each sample, then accuracy against the
/// observed labels.
pub fn evaluate<T: Scalar>(
    model: &TrainedModel<T>,
    samples: &[&LabeledImage<T>],
) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::EmptySplit("no samples to evaluate".into()));
    }
    let images: Vec<_> = samples.iter().map(|s| &s.image).collect();
    let probs = model.predict_images(&images)?;
    let targets: Vec<T> = samples
        .iter()
        .map(|s| T::from_count(s.label.target() as usize))
        .collect();
    Ok(Evaluation {
        accuracy: accuracy(&probs, &targets)?,
        probabilities: probs.iter().map(|p| p.as_f64()).collect(),
    })
}

pub const METRICS_FILE: &str = "metrics.json";
pub const CURVES_FILE: &str = "curves.csv";

/// `epoch,loss,train_acc,test_acc`, one row per epoch. A skipped epoch's
/// loss is written as `NaN`.
pub fn curves_csv(metrics: &Metrics) -> String {
    let mut out = String::from("epoch,loss,train_acc,test_acc\n");
    for e in &metrics.epochs {
        out.push_str(&format!(
            "{},{},{},{}\n",
            e.epoch,
            e.loss.unwrap_or(f64::NAN),
            e.train_acc,
            e.test_acc
        ));
    }
    out
}

/// Writes [`METRICS_FILE`] and [`CURVES_FILE`] into `dir`, creating it.
pub fn export_report(metrics: &Metrics, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = serde_json::to_string_pretty(metrics)
        .map_err(|e| Error::InvalidArgument(format!("cannot serialize metrics: {e}")))?;
    let path = dir.join(METRICS_FILE);
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    let path = dir.join(CURVES_FILE);
    std::fs::write(&path, curves_csv(metrics)).map_err(|e| Error::io(&path, e))
}

pub fn load_metrics(path: &Path) -> Result<Metrics> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Corrupt {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn metrics(epochs: usize) -> Metrics {
        Metrics {
            model: "densenet-gp".into(),
            seed: 7,
            config_digest: TrainConfig::default().digest(),
            train_accuracy: 0.9,
            test_accuracy: 0.1 + 0.2,
            epochs: (1..=epochs)
                .map(|e| EpochRecord {
                    epoch: e,
                    loss: if e == 2 { None } else { Some(1.0 / e as f64) },
                    train_acc: 0.5,
                    test_acc: 1.0 / 3.0,
                })
                .collect(),
            skipped_batches: 1,
            last_batch_train_accuracy: Some(0.85),
            wall_time_s: None,
        }
    }

    #[test]
    fn tie_counts_as_class_one() {
        assert_eq!(accuracy(&[0.5f64, 0.5], &[1.0, 0.0]).unwrap(), 0.5);
        assert_eq!(
            accuracy(&[0.9f64, 0.1, 0.7], &[1.0, 0.0, 1.0]).unwrap(),
            1.0
        );
        assert!(matches!(
            accuracy::<f64>(&[], &[]),
            Err(Error::EmptySplit(_))
        ));
    }

    #[test]
    fn default_digest_echoes_optimizer_settings() {
        let d = TrainConfig::default().digest();
        for token in ["lr=0.001", "wd=0.001", "epochs=50", "batch=128"] {
            assert!(d.contains(token), "{d}");
        }
    }

    #[test]
    fn report_round_trip_and_row_count() {
        let dir = tempfile::tempdir().unwrap();
        let m = metrics(4);
        export_report(&m, dir.path()).unwrap();
        assert_eq!(load_metrics(&dir.path().join(METRICS_FILE)).unwrap(), m);
        let csv = std::fs::read_to_string(dir.path().join(CURVES_FILE)).unwrap();
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.lines().nth(2).unwrap().starts_with("2,NaN,"));

        let again = tempfile::tempdir().unwrap();
        export_report(&m, again.path()).unwrap();
        for f in [METRICS_FILE, CURVES_FILE] {
            assert_eq!(
                std::fs::read(dir.path().join(f)).unwrap(),
                std::fs::read(again.path().join(f)).unwrap()
            );
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let zero_epochs = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(zero_epochs.validate().is_ok());
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
