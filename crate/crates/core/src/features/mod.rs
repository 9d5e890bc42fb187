//! Classical texture descriptors: multi-scale LBP, GLCM properties and Haar
//! wavelet statistics.

pub mod glcm;
pub mod lbp;
pub mod wavelet;

pub use glcm::{glcm, glcm_features, glcm_properties, quantize_gray, GlcmConfig, QuantizedImage};
pub use lbp::{
    lbp_codes, lbp_histogram, multiscale_lbp, to_grayscale, uniform_bin, uniform_lbp_histogram,
    LbpConfig,
};
pub use wavelet::{
    haar_decompose, haar_dwt2, haar_idwt2, haar_reconstruct, msws_features, HaarBands,
    WaveletConfig,
};

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagekit::{ImageTensor, LabeledImage};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector<T> {
    pub values: Vec<T>,
    /// Extractor name and configuration.
    pub descriptor_id: String,
}

impl<T: Scalar> FeatureVector<T> {
    pub fn new(values: Vec<T>, descriptor_id: impl Into<String>) -> Self {
        FeatureVector {
            values,
            descriptor_id: descriptor_id.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// A classical extractor with its configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum Extractor {
    Lbp(LbpConfig),
    Glcm(GlcmConfig),
    Msws(WaveletConfig),
}

impl Extractor {
    pub const NAMES: [&'static str; 3] = ["lbp", "glcm", "msws"];

    pub fn name(&self) -> &'static str {
        match self {
            Extractor::Lbp(_) => "lbp",
            Extractor::Glcm(_) => "glcm",
            Extractor::Msws(_) => "msws",
        }
    }

    pub fn feature_len(&self) -> usize {
        match self {
            Extractor::Lbp(c) => c.feature_len(),
            Extractor::Glcm(c) => c.feature_len(),
            Extractor::Msws(c) => c.feature_len(3),
        }
    }

    /// Extract from an RGB image with values in `[0,1]`.
    pub fn extract<T: Scalar>(&self, img: &ImageTensor<T>) -> Result<FeatureVector<T>> {
        let rgb = img.to_rgb()?;
        match self {
            Extractor::Lbp(c) => multiscale_lbp(&to_grayscale(&rgb)?, c),
            Extractor::Glcm(c) => glcm_features(&to_grayscale(&rgb)?, c),
            Extractor::Msws(c) => msws_features(&rgb, c),
        }
    }
}

impl FromStr for Extractor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lbp" => Ok(Extractor::Lbp(LbpConfig::default())),
            "glcm" => Ok(Extractor::Glcm(GlcmConfig::default())),
            "msws" => Ok(Extractor::Msws(WaveletConfig::default())),
            other => Err(Error::InvalidArgument(format!(
                "unknown extractor '{other}'; valid methods: {}",
                Self::NAMES.join(", ")
            ))),
        }
    }
}

/// `image_id,label,split,f0..fK` with one row per image; values use Rust's
/// shortest round-trip float formatting.
pub fn features_csv<T: Scalar>(rows: &[(&LabeledImage<T>, FeatureVector<T>)]) -> String {
    let width = rows.first().map_or(0, |(_, f)| f.len());
    let mut out = String::from("image_id,label,split");
    for k in 0..width {
        write!(out, ",f{k}").unwrap();
    }
    out.push('\n');
    for (sample, f) in rows {
        write!(
            out,
            "{},{},{}",
            sample.id,
            sample.label.dir_name(),
            sample.split.dir_name()
        )
        .unwrap();
        for v in &f.values {
            write!(out, ",{}", v.as_f64()).unwrap();
        }
        out.push('\n');
    }
    out
}
