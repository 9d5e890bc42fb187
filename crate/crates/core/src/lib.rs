//! DenseNet-GP: a densely-connected CNN feature extractor trained jointly with a
//! Laplace-approximated Gaussian-process classifier, plus classical texture
//! descriptors (multi-scale LBP, GLCM properties, Haar wavelet statistics) and a
//! synthetic two-class texture harness.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases at the
//! crate root fix the common `f64` instantiation.

// Negated float comparisons are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops mirror the matrix formulas they implement.
#![allow(clippy::needless_range_loop)]

pub mod cnn;
mod codec;
pub mod error;
pub mod features;
pub mod gp;
pub mod imagekit;
pub mod linalg;
pub mod pipeline;
pub mod rng;
pub mod scalar;
pub mod verify;

pub use error::{Error, ErrorKind, Result};
pub use scalar::Scalar;

pub type Image = imagekit::ImageTensor<f64>;
pub type Image32 = imagekit::ImageTensor<f32>;
pub type GpModel = gp::GpClassifier<f64>;
pub type Network = cnn::NetworkParams<f64>;
