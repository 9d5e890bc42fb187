use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{ImageTensor, NormalizationStats};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;

/// Bilinear resize with pixel centers at half-integers, so a same-size resize
/// reproduces the input exactly.
pub fn resize_bilinear<T: Scalar>(
    img: &ImageTensor<T>,
    out_h: usize,
    out_w: usize,
) -> Result<ImageTensor<T>> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument(format!(
            "resize target {out_h}x{out_w} has a zero dimension"
        )));
    }
    let (h, w, ch) = (img.height(), img.width(), img.channels());
    let ys: Vec<_> = (0..out_h).map(|o| sample_coord(o, h, out_h)).collect();
    let xs: Vec<_> = (0..out_w).map(|o| sample_coord(o, w, out_w)).collect();
    let mut data = Vec::with_capacity(out_h * out_w * ch);
    for &(y0, y1, fy) in &ys {
        let fy = T::c(fy);
        for &(x0, x1, fx) in &xs {
            let fx = T::c(fx);
            for c in 0..ch {
                let top = img.get(y0, x0, c) * (T::one() - fx) + img.get(y0, x1, c) * fx;
                let bot = img.get(y1, x0, c) * (T::one() - fx) + img.get(y1, x1, c) * fx;
                data.push(top * (T::one() - fy) + bot * fy);
            }
        }
    }
    ImageTensor::new(out_h, out_w, ch, data)
}

/// Source sample for output index `o`: `(lower, upper, fraction)`.
fn sample_coord(o: usize, n_in: usize, n_out: usize) -> (usize, usize, f64) {
    let src = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
    let lo = src.floor() as usize;
    let hi = (lo + 1).min(n_in - 1);
    (lo, hi, src - lo as f64)
}

/// Window of `out_h × out_w` starting at `floor((H−out_h)/2), floor((W−out_w)/2)`.
pub fn center_crop<T: Scalar>(
    img: &ImageTensor<T>,
    out_h: usize,
    out_w: usize,
) -> Result<ImageTensor<T>> {
    if out_h == 0 || out_w == 0 || out_h > img.height() || out_w > img.width() {
        return Err(Error::InvalidArgument(format!(
            "cannot crop {}x{} image to {out_h}x{out_w}",
            img.height(),
            img.width()
        )));
    }
    let top = (img.height() - out_h) / 2;
    let left = (img.width() - out_w) / 2;
    Ok(ImageTensor::from_fn(
        out_h,
        out_w,
        img.channels(),
        |y, x, c| img.get(top + y, left + x, c),
    ))
}

/// Flips horizontally then vertically, each with its own probability. Two
/// uniforms are always drawn so the stream advances identically per call.
pub fn random_flip<T: Scalar>(
    img: &ImageTensor<T>,
    horizontal_p: f64,
    vertical_p: f64,
    rng: &mut Rng,
) -> ImageTensor<T> {
    let flip_h = rng.random::<f64>() < horizontal_p;
    let flip_v = rng.random::<f64>() < vertical_p;
    let (h, w) = (img.height(), img.width());
    ImageTensor::from_fn(h, w, img.channels(), |y, x, c| {
        let sy = if flip_v { h - 1 - y } else { y };
        let sx = if flip_h { w - 1 - x } else { x };
        img.get(sy, sx, c)
    })
}

pub fn normalize<T: Scalar>(
    img: &ImageTensor<T>,
    stats: &NormalizationStats,
) -> Result<ImageTensor<T>> {
    if img.channels() != 3 {
        return Err(Error::Shape(format!(
            "normalization needs 3 channels, image has {}",
            img.channels()
        )));
    }
    let mean = stats.mean.map(T::c);
    let std = stats.std.map(T::c);
    let mut out = img.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let c = i % 3;
        *v = (*v - mean[c]) / std[c];
    }
    Ok(out)
}

/// Inverse of [`normalize`].
pub fn denormalize<T: Scalar>(
    img: &ImageTensor<T>,
    stats: &NormalizationStats,
) -> Result<ImageTensor<T>> {
    if img.channels() != 3 {
        return Err(Error::Shape(format!(
            "denormalization needs 3 channels, image has {}",
            img.channels()
        )));
    }
    let mut out = img.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let c = i % 3;
        *v = *v * T::c(stats.std[c]) + T::c(stats.mean[c]);
    }
    Ok(out)
}

/// Resize → center crop → (training only: flip) → normalize.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Preprocess {
    pub resize: usize,
    pub crop: usize,
    pub flip_horizontal_p: f64,
    pub flip_vertical_p: f64,
    pub stats: NormalizationStats,
}

impl Preprocess {
    /// Keeps the 300→224 resize-to-crop ratio for an arbitrary network input size.
    pub fn for_input_size(input_size: usize) -> Self {
        Preprocess {
            resize: ((input_size as f64) * 300.0 / 224.0).round() as usize,
            crop: input_size,
            flip_horizontal_p: 0.5,
            flip_vertical_p: 0.5,
            stats: NormalizationStats::IMAGENET,
        }
    }

    /// Resize and crop only; the `[0,1]` image used by the texture extractors.
    pub fn geometry<T: Scalar>(&self, img: &ImageTensor<T>) -> Result<ImageTensor<T>> {
        let rgb = img.to_rgb()?;
        let resized = resize_bilinear(&rgb, self.resize, self.resize)?;
        center_crop(&resized, self.crop, self.crop)
    }

    pub fn eval<T: Scalar>(&self, img: &ImageTensor<T>) -> Result<ImageTensor<T>> {
        normalize(&self.geometry(img)?, &self.stats)
    }

    pub fn train<T: Scalar>(&self, img: &ImageTensor<T>, rng: &mut Rng) -> Result<ImageTensor<T>> {
        let cropped = self.geometry(img)?;
        let flipped = random_flip(&cropped, self.flip_horizontal_p, self.flip_vertical_p, rng);
        normalize(&flipped, &self.stats)
    }
}

impl Default for Preprocess {
    fn default() -> Self {
        Preprocess {
            resize: 300,
            crop: 224,
            flip_horizontal_p: 0.5,
            flip_vertical_p: 0.5,
            stats: NormalizationStats::IMAGENET,
        }
    }
}
