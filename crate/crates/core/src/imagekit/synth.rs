//! Seeded two-class texture generator.
//!
//! Coal renders dark and low-contrast with coarse blotches; waste renders
//! lighter with fine speckle. The test split is tagged test-only and darkened
//! by a multiplicative factor to imitate poorly lit mine imagery. Training
//! labels can be flipped at a configurable rate.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Class, Dataset, ImageTensor, LabeledImage, SplitTag};
use crate::error::{Error, Result};
use crate::rng::{stream, stream_rng, Rng};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextureParams {
    /// Mean intensity in `[0,1]`.
    pub albedo: f64,
    /// Standard deviation of the smooth texture field.
    pub contrast: f64,
    /// Correlation length of the texture field, in pixels.
    pub grain: f64,
    /// Per-image standard deviation of the albedo.
    pub albedo_jitter: f64,
    /// Per-channel multiplicative tint.
    pub tint: [f64; 3],
}

impl TextureParams {
    pub fn coal() -> Self {
        TextureParams {
            albedo: 0.18,
            contrast: 0.05,
            grain: 6.0,
            albedo_jitter: 0.03,
            tint: [1.0, 1.0, 1.06],
        }
    }

    pub fn waste() -> Self {
        TextureParams {
            albedo: 0.52,
            contrast: 0.2,
            grain: 1.5,
            albedo_jitter: 0.05,
            tint: [1.06, 1.0, 0.9],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Images per class, across both splits.
    pub samples_per_class: usize,
    /// Fraction of each class rendered as the darkened test split.
    pub test_fraction: f64,
    pub image_size: usize,
    pub class_a_texture: TextureParams,
    pub class_b_texture: TextureParams,
    /// Multiplicative brightness applied to test images (1 = unchanged).
    pub brightness_shift: f64,
    pub label_flip_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            samples_per_class: 150,
            test_fraction: 1.0 / 3.0,
            image_size: 32,
            class_a_texture: TextureParams::coal(),
            class_b_texture: TextureParams::waste(),
            brightness_shift: 0.75,
            label_flip_rate: 0.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples_per_class == 0 {
            return Err(Error::InvalidArgument(
                "samples_per_class must be >= 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.label_flip_rate) {
            return Err(Error::InvalidArgument(format!(
                "label_flip_rate must be in [0,1], got {}",
                self.label_flip_rate
            )));
        }
        if !(0.0..=1.0).contains(&self.test_fraction) {
            return Err(Error::InvalidArgument(format!(
                "test_fraction must be in [0,1], got {}",
                self.test_fraction
            )));
        }
        if self.image_size < 2 {
            return Err(Error::InvalidArgument("image_size must be >= 2".into()));
        }
        if !(self.brightness_shift > 0.0) {
            return Err(Error::InvalidArgument(
                "brightness_shift must be positive".into(),
            ));
        }
        for t in [&self.class_a_texture, &self.class_b_texture] {
            if !(t.grain > 0.0) {
                return Err(Error::InvalidArgument(
                    "texture grain must be positive".into(),
                ));
            }
        }
        Ok(())
    }

    /// Number of test-split images per class.
    pub fn test_per_class(&self) -> usize {
        ((self.samples_per_class as f64) * self.test_fraction).round() as usize
    }

    pub fn train_per_class(&self) -> usize {
        self.samples_per_class - self.test_per_class()
    }
}

/// Smooth noise: a coarse Gaussian lattice with spacing `grain`, bilinearly
/// interpolated to the full grid and rescaled to unit variance.
fn texture_field(size: usize, grain: f64, rng: &mut Rng) -> Vec<f64> {
    let cells = (size as f64 / grain).ceil() as usize + 2;
    let lattice: Vec<f64> = (0..cells * cells)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let offset_y: f64 = rng.random::<f64>();
    let offset_x: f64 = rng.random::<f64>();
    let mut field = Vec::with_capacity(size * size);
    for y in 0..size {
        let gy = y as f64 / grain + offset_y;
        let y0 = (gy.floor() as usize).min(cells - 2);
        let fy = gy - y0 as f64;
        for x in 0..size {
            let gx = x as f64 / grain + offset_x;
            let x0 = (gx.floor() as usize).min(cells - 2);
            let fx = gx - x0 as f64;
            let at = |r: usize, c: usize| lattice[r * cells + c];
            let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1) * fx;
            let bot = at(y0 + 1, x0) * (1.0 - fx) + at(y0 + 1, x0 + 1) * fx;
            field.push(top * (1.0 - fy) + bot * fy);
        }
    }
    let n = field.len() as f64;
    let mean = field.iter().sum::<f64>() / n;
    let sd = (field.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let sd = if sd > 0.0 { sd } else { 1.0 };
    field.iter_mut().for_each(|v| *v = (*v - mean) / sd);
    field
}

fn render<T: Scalar>(
    tex: &TextureParams,
    size: usize,
    brightness: f64,
    rng: &mut Rng,
) -> ImageTensor<T> {
    let albedo = tex.albedo + tex.albedo_jitter * rng.sample::<f64, _>(StandardNormal);
    let field = texture_field(size, tex.grain, rng);
    let mut data = Vec::with_capacity(size * size * 3);
    for &f in &field {
        let v = albedo + tex.contrast * f;
        for tint in tex.tint {
            let q = ((v * tint * brightness).clamp(0.0, 1.0) * 255.0).round() / 255.0;
            data.push(T::c(q));
        }
    }
    ImageTensor::new(size, size, 3, data).expect("size >= 1")
}

/// Deterministic function of `cfg`. Image `k` of class `c` draws from its own
/// stream; label flips draw one uniform per training image, class-major, from
/// a dedicated stream.
pub fn generate_synthetic_dataset<T: Scalar>(cfg: &SynthConfig) -> Result<Dataset<T>> {
    cfg.validate()?;
    let n_train = cfg.train_per_class();
    let mut flip_rng = stream_rng(cfg.seed, stream::LABEL_FLIP, 0);
    let mut samples = Vec::with_capacity(2 * cfg.samples_per_class);
    for (ci, (class, tex)) in [
        (Class::Coal, &cfg.class_a_texture),
        (Class::Waste, &cfg.class_b_texture),
    ]
    .into_iter()
    .enumerate()
    {
        for k in 0..cfg.samples_per_class {
            let index = (ci * cfg.samples_per_class + k) as u64;
            let mut rng = stream_rng(cfg.seed, stream::SYNTH_IMAGE, index);
            let split = if k < n_train {
                SplitTag::Train
            } else {
                SplitTag::Test
            };
            let brightness = match split {
                SplitTag::Test => cfg.brightness_shift,
                _ => 1.0,
            };
            let image = render(tex, cfg.image_size, brightness, &mut rng);
            let label =
                if split == SplitTag::Train && flip_rng.random::<f64>() < cfg.label_flip_rate {
                    class.flipped()
                } else {
                    class
                };
            samples.push(LabeledImage {
                id: format!("{}_{k:04}", class.dir_name()),
                image,
                true_class: class,
                label,
                split,
            });
        }
    }
    Ok(Dataset { samples })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64, flip: f64) -> SynthConfig {
        SynthConfig {
            samples_per_class: 100,
            image_size: 16,
            label_flip_rate: flip,
            seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = generate_synthetic_dataset::<f64>(&small(5, 0.1)).unwrap();
        let b = generate_synthetic_dataset::<f64>(&small(5, 0.1)).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_dataset::<f64>(&small(6, 0.1)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn no_flips_at_zero_rate() {
        let ds = generate_synthetic_dataset::<f64>(&small(1, 0.0)).unwrap();
        assert!(ds.samples.iter().all(|s| s.label == s.true_class));
    }

    #[test]
    fn flip_count_matches_replayed_stream() {
        let cfg = small(42, 0.1);
        let ds = generate_synthetic_dataset::<f64>(&cfg).unwrap();
        let train = ds
            .samples
            .iter()
            .filter(|s| s.split == SplitTag::Train)
            .count();
        let mut replay = stream_rng(cfg.seed, stream::LABEL_FLIP, 0);
        let expected = (0..train)
            .filter(|_| replay.random::<f64>() < cfg.label_flip_rate)
            .count();
        assert_eq!(ds.flipped_count(), expected);
        assert!(expected > 0);
        // Test images keep their generating label.
        assert!(ds
            .samples
            .iter()
            .filter(|s| s.split == SplitTag::Test)
            .all(|s| s.label == s.true_class));
    }

    #[test]
    fn split_sizes_and_darkening() {
        let cfg = SynthConfig {
            brightness_shift: 0.5,
            ..small(3, 0.0)
        };
        let ds = generate_synthetic_dataset::<f64>(&cfg).unwrap();
        let test = ds
            .samples
            .iter()
            .filter(|s| s.split == SplitTag::Test)
            .count();
        assert_eq!(test, 2 * cfg.test_per_class());
        let mean = |split: SplitTag, class: Class| {
            let v: Vec<f64> = ds
                .samples
                .iter()
                .filter(|s| s.split == split && s.true_class == class)
                .flat_map(|s| s.image.data().to_vec())
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!(mean(SplitTag::Test, Class::Waste) < 0.7 * mean(SplitTag::Train, Class::Waste));
        assert!(mean(SplitTag::Train, Class::Coal) < mean(SplitTag::Train, Class::Waste));
    }

    #[test]
    fn values_are_eight_bit_levels() {
        let ds = generate_synthetic_dataset::<f64>(&small(9, 0.0)).unwrap();
        for v in ds.samples[0].image.data() {
            let scaled = v * 255.0;
            assert!((scaled - scaled.round()).abs() < 1e-9);
        }
    }

    #[test]
    fn validation() {
        assert!(generate_synthetic_dataset::<f64>(&small(0, 1.5)).is_err());
        let zero = SynthConfig {
            samples_per_class: 0,
            ..SynthConfig::default()
        };
        assert!(generate_synthetic_dataset::<f64>(&zero).is_err());
    }
}
