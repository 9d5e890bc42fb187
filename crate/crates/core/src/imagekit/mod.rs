//! Images, augmentation and the synthetic two-class texture generator.

mod augment;
mod io;
mod synth;

pub use augment::{center_crop, denormalize, normalize, random_flip, resize_bilinear, Preprocess};
pub use io::{
    load_dataset, load_image, save_png, write_dataset, Manifest, ManifestEntry, MANIFEST_FILE,
};
pub use synth::{generate_synthetic_dataset, SynthConfig, TextureParams};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Height × width × channels image, row-major and channel-last.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor<T> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Scalar> ImageTensor<T> {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Shape(format!(
                "zero-sized image {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "{} values for a {height}x{width}x{channels} image",
                data.len()
            )));
        }
        Ok(ImageTensor {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: T) -> Self {
        Self::new(
            height,
            width,
            channels,
            vec![value; height * width * channels],
        )
        .expect("nonzero dimensions")
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, channels, data).expect("nonzero dimensions")
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }
    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }
    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn data(&self) -> &[T] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }
    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> T {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: T) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Copy of one channel as a row-major plane.
    pub fn plane(&self, c: usize) -> Vec<T> {
        self.data
            .iter()
            .skip(c)
            .step_by(self.channels)
            .copied()
            .collect()
    }

    pub fn min_max(&self) -> (T, T) {
        self.data
            .iter()
            .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Single-channel images are replicated to three channels.
    pub fn to_rgb(&self) -> Result<Self> {
        match self.channels {
            3 => Ok(self.clone()),
            1 => Ok(Self::from_fn(self.height, self.width, 3, |y, x, _| {
                self.get(y, x, 0)
            })),
            n => Err(Error::Shape(format!(
                "cannot convert {n}-channel image to RGB"
            ))),
        }
    }

    pub fn cast<U: Scalar>(&self) -> ImageTensor<U> {
        ImageTensor {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|v| U::c(v.as_f64())).collect(),
        }
    }
}

/// Per-channel affine normalization constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl NormalizationStats {
    /// ImageNet channel statistics.
    pub const IMAGENET: NormalizationStats = NormalizationStats {
        mean: [0.485, 0.456, 0.406],
        std: [0.229, 0.224, 0.225],
    };

    pub fn new(mean: [f64; 3], std: [f64; 3]) -> Result<Self> {
        if std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "normalization std must be positive, got {std:?}"
            )));
        }
        Ok(NormalizationStats { mean, std })
    }
}

impl Default for NormalizationStats {
    fn default() -> Self {
        Self::IMAGENET
    }
}

/// Binary class. `Waste` is the positive class (target 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Class {
    Coal,
    Waste,
}

impl Class {
    pub fn target(self) -> u8 {
        match self {
            Class::Coal => 0,
            Class::Waste => 1,
        }
    }

    pub fn from_target(t: u8) -> Self {
        if t == 0 {
            Class::Coal
        } else {
            Class::Waste
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Class::Coal => Class::Waste,
            Class::Waste => Class::Coal,
        }
    }

    pub fn dir_name(self) -> &'static str {
        match self {
            Class::Coal => "coal",
            Class::Waste => "waste",
        }
    }

    pub fn from_dir_name(name: &str) -> Option<Self> {
        match name {
            "coal" => Some(Class::Coal),
            "waste" => Some(Class::Waste),
            _ => None,
        }
    }
}

/// Split assignment carried by a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Test,
    /// Assigned later by the stratified ratio split.
    Unassigned,
}

impl SplitTag {
    pub fn dir_name(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Test => "test",
            SplitTag::Unassigned => "all",
        }
    }

    pub fn from_dir_name(name: &str) -> Self {
        match name {
            "train" => SplitTag::Train,
            "test" => SplitTag::Test,
            _ => SplitTag::Unassigned,
        }
    }
}

/// One image with its generating class, its (possibly noisy) training label
/// and its split tag.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage<T> {
    pub id: String,
    pub image: ImageTensor<T>,
    pub true_class: Class,
    pub label: Class,
    pub split: SplitTag,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset<T> {
    pub samples: Vec<LabeledImage<T>>,
}

impl<T: Scalar> Dataset<T> {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn flipped_count(&self) -> usize {
        self.samples
            .iter()
            .filter(|s| s.label != s.true_class)
            .count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inconsistent_lengths() {
        assert!(ImageTensor::new(2, 2, 3, vec![0.0f64; 11]).is_err());
        assert!(ImageTensor::new(0, 2, 3, Vec::<f64>::new()).is_err());
    }

    #[test]
    fn plane_extracts_channel() {
        let img = ImageTensor::from_fn(2, 2, 3, |y, x, c| (y * 100 + x * 10 + c) as f64);
        assert_eq!(img.plane(1), vec![1.0, 11.0, 101.0, 111.0]);
    }

    #[test]
    fn normalization_rejects_nonpositive_std() {
        assert!(NormalizationStats::new([0.0; 3], [1.0, 0.0, 1.0]).is_err());
    }
}
