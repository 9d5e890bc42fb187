use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::classical::Standardizer;
use super::joint::network_features;
use crate::cnn::{load_checkpoint_for, save_checkpoint, NetworkConfig, NetworkParams};
use crate::error::{Error, Result};
use crate::features::Extractor;
use crate::gp::{GpClassifier, GpPrediction};
use crate::imagekit::{ImageTensor, Preprocess};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Manifest file inside a model directory.
pub const MODEL_MANIFEST: &str = "model.json";
const NETWORK_FILE: &str = "network.ckpt";
const GP_FILE: &str = "gp.bin";
const MANIFEST_VERSION: u32 = 1;

/// Trained CNN feature extractor plus the GP fitted on its training features.
#[derive(Debug, Clone)]
pub struct DenseGpModel<T> {
    pub preprocess: Preprocess,
    pub network: NetworkParams<T>,
    pub gp: GpClassifier<T>,
}

/// Classical descriptor, feature standardization and GP.
#[derive(Debug, Clone)]
pub struct FeatureGpModel<T> {
    pub preprocess: Preprocess,
    pub extractor: Extractor,
    pub scaler: Standardizer,
    pub gp: GpClassifier<T>,
}

/// A loaded or freshly trained classifier of either kind.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum TrainedModel<T> {
    DenseGp(DenseGpModel<T>),
    FeatureGp(FeatureGpModel<T>),
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
enum Manifest {
    DensenetGp {
        format_version: u32,
        preprocess: Preprocess,
        network: NetworkConfig,
    },
    FeatureGp {
        format_version: u32,
        preprocess: Preprocess,
        extractor: Extractor,
        scaler: Standardizer,
    },
}

impl<T: Scalar> DenseGpModel<T> {
    pub fn features(&self, images: &[&ImageTensor<T>]) -> Result<Matrix<T>> {
        let inputs: Vec<ImageTensor<T>> = images
            .par_iter()
            .map(|img| self.preprocess.eval(img))
            .collect::<Result<_>>()?;
        network_features(&self.network, &inputs)
    }
}

impl<T: Scalar> FeatureGpModel<T> {
    pub fn features(&self, images: &[&ImageTensor<T>]) -> Result<Matrix<T>> {
        let raw = super::classical::extract_matrix(images, &self.preprocess, &self.extractor)?;
        self.scaler.transform(&raw)
    }
}

impl<T: Scalar> TrainedModel<T> {
    pub fn name(&self) -> String {
        match self {
            TrainedModel::DenseGp(_) => "densenet-gp".into(),
            TrainedModel::FeatureGp(m) => format!("{}-gp", m.extractor.name()),
        }
    }

    pub fn gp(&self) -> &GpClassifier<T> {
        match self {
            TrainedModel::DenseGp(m) => &m.gp,
            TrainedModel::FeatureGp(m) => &m.gp,
        }
    }

    /// Deterministic feature rows for raw images.
    pub fn features(&self, images: &[&ImageTensor<T>]) -> Result<Matrix<T>> {
        match self {
            TrainedModel::DenseGp(m) => m.features(images),
            TrainedModel::FeatureGp(m) => m.features(images),
        }
    }

    pub fn predict(&self, images: &[&ImageTensor<T>]) -> Result<Vec<GpPrediction<T>>> {
        if images.is_empty() {
            return Ok(Vec::new());
        }
        self.gp().predict(&self.features(images)?)
    }

    /// Class-1 probability per image.
    pub fn predict_images(&self, images: &[&ImageTensor<T>]) -> Result<Vec<T>> {
        Ok(self
            .predict(images)?
            .into_iter()
            .map(|p| p.class_probability)
            .collect())
    }

    /// Writes the manifest, the GP file and, for the CNN model, the
    /// network checkpoint into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = match self {
            TrainedModel::DenseGp(m) => {
                save_checkpoint(&m.network, None, &dir.join(NETWORK_FILE))?;
                Manifest::DensenetGp {
                    format_version: MANIFEST_VERSION,
                    preprocess: m.preprocess,
                    network: m.network.config().clone(),
                }
            }
            TrainedModel::FeatureGp(m) => Manifest::FeatureGp {
                format_version: MANIFEST_VERSION,
                preprocess: m.preprocess,
                extractor: m.extractor.clone(),
                scaler: m.scaler.clone(),
            },
        };
        self.gp().save(&dir.join(GP_FILE))?;
        let path = dir.join(MODEL_MANIFEST);
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MODEL_MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Corrupt {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        let check_version = |found: u32| {
            if found == MANIFEST_VERSION {
                Ok(())
            } else {
                Err(Error::VersionMismatch {
                    path: path.clone(),
                    found,
                    expected: MANIFEST_VERSION,
                })
            }
        };
        let gp_path = dir.join(GP_FILE);
        let gp = GpClassifier::load(&gp_path)?;
        let expect_dim = |d: usize| {
            if gp.feature_dim() == d {
                Ok(())
            } else {
                Err(Error::Corrupt {
                    path: gp_path.clone(),
                    reason: format!(
                        "GP has feature dimension {}, model produces {d}",
                        gp.feature_dim()
                    ),
                })
            }
        };
        match manifest {
            Manifest::DensenetGp {
                format_version,
                preprocess,
                network,
            } => {
                check_version(format_version)?;
                let ckpt = load_checkpoint_for(&dir.join(NETWORK_FILE), &network)?;
                expect_dim(ckpt.params.feature_dim())?;
                Ok(TrainedModel::DenseGp(DenseGpModel {
                    preprocess,
                    network: ckpt.params,
                    gp,
                }))
            }
            Manifest::FeatureGp {
                format_version,
                preprocess,
                extractor,
                scaler,
            } => {
                check_version(format_version)?;
                expect_dim(scaler.len())?;
                Ok(TrainedModel::FeatureGp(FeatureGpModel {
                    preprocess,
                    extractor,
                    scaler,
                    gp,
                }))
            }
        }
    }
}
