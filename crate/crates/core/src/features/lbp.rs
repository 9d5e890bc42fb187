//! Circular local binary patterns.
//!
//! Neighbour `k` of a centre pixel sits at angle `2πk/p` on a circle of radius
//! `r` (row offset `−r·sin`, column offset `r·cos`) and is sampled bilinearly.
//! Bit `k` is set when the neighbour is greater than or equal to the centre.

use serde::{Deserialize, Serialize};

use super::FeatureVector;
use crate::error::{Error, Result};
use crate::imagekit::ImageTensor;
use crate::scalar::Scalar;

/// Largest `p` for which the raw `2^p`-bin histogram is materialized.
pub const MAX_RAW_BITS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LbpConfig {
    /// `(p, r)` pairs: neighbour count and radius in pixels.
    pub scales: Vec<(usize, f64)>,
}

impl Default for LbpConfig {
    fn default() -> Self {
        LbpConfig {
            scales: vec![(8, 1.0), (16, 2.0), (24, 3.0), (24, 4.0)],
        }
    }
}

impl LbpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() {
            return Err(Error::InvalidArgument("LBP config has no scales".into()));
        }
        for &(p, r) in &self.scales {
            check_scale(p, r)?;
        }
        Ok(())
    }

    pub fn feature_len(&self) -> usize {
        self.scales.iter().map(|&(p, _)| p + 2).sum()
    }

    pub fn descriptor_id(&self) -> String {
        let scales: Vec<String> = self
            .scales
            .iter()
            .map(|(p, r)| format!("{p},{r}"))
            .collect();
        format!("lbp-riu2[{}]", scales.join(";"))
    }
}

fn check_scale(p: usize, r: f64) -> Result<()> {
    if !(4..=32).contains(&p) {
        return Err(Error::InvalidArgument(format!(
            "LBP neighbour count must be in [4, 32], got {p}"
        )));
    }
    if !(r >= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "LBP radius must be >= 1, got {r}"
        )));
    }
    Ok(())
}

/// Luma = 0.299 R + 0.587 G + 0.114 B.
pub fn to_grayscale<T: Scalar>(img: &ImageTensor<T>) -> Result<ImageTensor<T>> {
    if img.channels() != 3 {
        return Err(Error::Shape(format!(
            "grayscale conversion needs 3 channels, image has {}",
            img.channels()
        )));
    }
    let (wr, wg, wb) = (T::c(0.299), T::c(0.587), T::c(0.114));
    Ok(ImageTensor::from_fn(
        img.height(),
        img.width(),
        1,
        |y, x, _| wr * img.get(y, x, 0) + wg * img.get(y, x, 1) + wb * img.get(y, x, 2),
    ))
}

#[inline]
fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

struct Sampler {
    /// Per neighbour: integer base offsets and fractional parts.
    taps: Vec<(isize, isize, f64, f64)>,
    margin: usize,
}

impl Sampler {
    fn new(p: usize, r: f64) -> Self {
        let taps = (0..p)
            .map(|k| {
                let theta = 2.0 * std::f64::consts::PI * k as f64 / p as f64;
                let dy = snap(-r * theta.sin());
                let dx = snap(r * theta.cos());
                let (by, bx) = (dy.floor(), dx.floor());
                (by as isize, bx as isize, dy - by, dx - bx)
            })
            .collect();
        Sampler {
            taps,
            margin: r.ceil() as usize,
        }
    }

    #[inline]
    fn code<T: Scalar>(&self, gray: &ImageTensor<T>, y: usize, x: usize) -> u32 {
        let center = gray.get(y, x, 0);
        let mut code = 0u32;
        for (k, &(by, bx, fy, fx)) in self.taps.iter().enumerate() {
            let y0 = (y as isize + by) as usize;
            let x0 = (x as isize + bx) as usize;
            let y1 = if fy > 0.0 { y0 + 1 } else { y0 };
            let x1 = if fx > 0.0 { x0 + 1 } else { x0 };
            let (fy, fx) = (T::c(fy), T::c(fx));
            let a = gray.get(y0, x0, 0);
            let b = gray.get(y0, x1, 0);
            let c = gray.get(y1, x0, 0);
            let d = gray.get(y1, x1, 0);
            let top = a + (b - a) * fx;
            let bottom = c + (d - c) * fx;
            let v = top + (bottom - top) * fy;
            if v >= center {
                code |= 1 << k;
            }
        }
        code
    }
}

/// LBP code of every interior pixel, row-major.
pub fn lbp_codes<T: Scalar>(gray: &ImageTensor<T>, p: usize, r: f64) -> Result<Vec<u32>> {
    check_scale(p, r)?;
    if gray.channels() != 1 {
        return Err(Error::Shape(format!(
            "LBP needs a single-channel image, got {} channels",
            gray.channels()
        )));
    }
    let sampler = Sampler::new(p, r);
    let m = sampler.margin;
    if gray.height() <= 2 * m || gray.width() <= 2 * m {
        return Err(Error::InvalidArgument(format!(
            "{}x{} image too small for LBP radius {r}",
            gray.height(),
            gray.width()
        )));
    }
    let mut codes = Vec::with_capacity((gray.height() - 2 * m) * (gray.width() - 2 * m));
    for y in m..gray.height() - m {
        for x in m..gray.width() - m {
            codes.push(sampler.code(gray, y, x));
        }
    }
    Ok(codes)
}

fn normalized_histogram<T: Scalar>(bins: usize, indices: impl Iterator<Item = usize>) -> Vec<T> {
    let mut counts = vec![0u64; bins];
    let mut total = 0u64;
    for i in indices {
        counts[i] += 1;
        total += 1;
    }
    let total = T::c(total as f64);
    counts.into_iter().map(|c| T::c(c as f64) / total).collect()
}

/// Raw `2^p`-bin histogram over interior pixels, normalized to sum 1.
pub fn lbp_histogram<T: Scalar>(
    gray: &ImageTensor<T>,
    p: usize,
    r: f64,
) -> Result<FeatureVector<T>> {
    if p > MAX_RAW_BITS {
        return Err(Error::InvalidArgument(format!(
            "raw LBP histogram limited to p <= {MAX_RAW_BITS}; use the uniform mapping for p = {p}"
        )));
    }
    let codes = lbp_codes(gray, p, r)?;
    Ok(FeatureVector::new(
        normalized_histogram(1 << p, codes.iter().map(|&c| c as usize)),
        format!("lbp-raw[{p},{r}]"),
    ))
}

/// Rotation-invariant uniform bin: the number of set bits for codes with at
/// most two circular 0/1 transitions, `p + 1` otherwise.
pub fn uniform_bin(code: u32, p: usize) -> usize {
    let mask = if p == 32 { u32::MAX } else { (1u32 << p) - 1 };
    let code = code & mask;
    let rotated = ((code >> 1) | ((code & 1) << (p - 1))) & mask;
    let transitions = (code ^ rotated).count_ones();
    if transitions <= 2 {
        code.count_ones() as usize
    } else {
        p + 1
    }
}

/// `p + 2`-bin rotation-invariant uniform histogram.
pub fn uniform_lbp_histogram<T: Scalar>(
    gray: &ImageTensor<T>,
    p: usize,
    r: f64,
) -> Result<FeatureVector<T>> {
    let codes = lbp_codes(gray, p, r)?;
    Ok(FeatureVector::new(
        normalized_histogram(p + 2, codes.iter().map(|&c| uniform_bin(c, p))),
        format!("lbp-riu2[{p},{r}]"),
    ))
}

/// Per-scale uniform histograms concatenated in config order.
pub fn multiscale_lbp<T: Scalar>(
    gray: &ImageTensor<T>,
    cfg: &LbpConfig,
) -> Result<FeatureVector<T>> {
    cfg.validate()?;
    let mut values = Vec::with_capacity(cfg.feature_len());
    for &(p, r) in &cfg.scales {
        values.extend(uniform_lbp_histogram(gray, p, r)?.values);
    }
    Ok(FeatureVector::new(values, cfg.descriptor_id()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn random_gray(seed: u64, h: usize, w: usize) -> ImageTensor<f64> {
        let mut rng = stream_rng(seed, 99, 0);
        ImageTensor::from_fn(h, w, 1, |_, _, _| rng.random::<f64>())
    }

    /// Straightforward reimplementation: explicit four-weight bilinear sampling.
    fn brute_force_histogram(img: &ImageTensor<f64>, p: usize, r: f64) -> Vec<u64> {
        let m = r.ceil() as usize;
        let mut hist = vec![0u64; 1 << p];
        for y in m..img.height() - m {
            for x in m..img.width() - m {
                let centre = img.get(y, x, 0);
                let mut code = 0usize;
                for k in 0..p {
                    let t = 2.0 * std::f64::consts::PI * (k as f64) / (p as f64);
                    let mut sy = y as f64 - r * t.sin();
                    let mut sx = x as f64 + r * t.cos();
                    if (sy - sy.round()).abs() < 1e-9 {
                        sy = sy.round();
                    }
                    if (sx - sx.round()).abs() < 1e-9 {
                        sx = sx.round();
                    }
                    let (y0, x0) = (sy.floor(), sx.floor());
                    let (wy, wx) = (sy - y0, sx - x0);
                    let px = |yy: f64, xx: f64| {
                        let yy = (yy as usize).min(img.height() - 1);
                        let xx = (xx as usize).min(img.width() - 1);
                        img.get(yy, xx, 0)
                    };
                    let v = (1.0 - wy) * (1.0 - wx) * px(y0, x0)
                        + (1.0 - wy) * wx * px(y0, x0 + 1.0)
                        + wy * (1.0 - wx) * px(y0 + 1.0, x0)
                        + wy * wx * px(y0 + 1.0, x0 + 1.0);
                    if v >= centre {
                        code |= 1 << k;
                    }
                }
                hist[code] += 1;
            }
        }
        hist
    }

    #[test]
    fn grayscale_weights() {
        let img = ImageTensor::new(1, 2, 3, vec![1.0f64, 1.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
        let g = to_grayscale(&img).unwrap();
        assert!((g.get(0, 0, 0) - 1.0).abs() < 1e-15);
        assert_eq!(g.get(0, 1, 0), 0.299);
        assert!(to_grayscale(&g).is_err());
    }

    #[test]
    fn grayscale_matches_weighted_sum_oracle() {
        let mut rng = stream_rng(3, 1, 1);
        let img = ImageTensor::from_fn(5, 4, 3, |_, _, _| rng.random::<f64>());
        let g = to_grayscale(&img).unwrap();
        for y in 0..5 {
            for x in 0..4 {
                let expect =
                    0.299 * img.get(y, x, 0) + 0.587 * img.get(y, x, 1) + 0.114 * img.get(y, x, 2);
                assert!((g.get(y, x, 0) - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn constant_image_fills_all_ones_bin() {
        let img = ImageTensor::filled(6, 6, 1, 0.3f64);
        let h = lbp_histogram(&img, 8, 1.0).unwrap();
        assert_eq!(h.values[255], 1.0);
        assert_eq!(h.values.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn isolated_bright_pixel_has_code_zero() {
        let mut img = ImageTensor::filled(5, 5, 1, 0.0f64);
        img.set(2, 2, 0, 1.0);
        let codes = lbp_codes(&img, 8, 1.0).unwrap();
        // Interior is 3x3; the bright pixel is its centre.
        assert_eq!(codes[4], 0);
    }

    #[test]
    fn matches_brute_force_on_random_images() {
        for seed in 0..5 {
            let img = random_gray(seed, 16, 16);
            for (p, r) in [(8, 1.0), (8, 2.0), (12, 1.5)] {
                let h = lbp_histogram(&img, p, r).unwrap();
                let oracle = brute_force_histogram(&img, p, r);
                let n: u64 = oracle.iter().sum();
                for (a, &b) in h.values.iter().zip(&oracle) {
                    assert_eq!((a * n as f64).round() as u64, b);
                }
            }
        }
    }

    #[test]
    fn too_small_image_is_rejected() {
        let img = ImageTensor::filled(6, 6, 1, 0.0f64);
        assert!(lbp_codes(&img, 8, 3.0).is_err());
        assert!(lbp_codes(&img, 8, 2.0).is_ok());
        assert!(lbp_codes(&img, 3, 1.0).is_err());
    }

    #[test]
    fn uniform_mapping_examples() {
        assert_eq!(uniform_bin(0, 8), 0);
        assert_eq!(uniform_bin(0xFF, 8), 8);
        assert_eq!(uniform_bin(0b0000_0111, 8), 3);
        assert_eq!(uniform_bin(0b1000_0011, 8), 3);
        assert_eq!(uniform_bin(0b0101_0101, 8), 9);
        assert_eq!(uniform_bin((1 << 24) - 1, 24), 24);
    }

    #[test]
    fn multiscale_default_length_and_constant_image() {
        let cfg = LbpConfig::default();
        assert_eq!(cfg.feature_len(), 10 + 18 + 26 + 26);
        let img = ImageTensor::filled(12, 12, 1, 0.5f64);
        let f = multiscale_lbp(&img, &cfg).unwrap();
        assert_eq!(f.values.len(), 80);
        // All-ones code maps to bin p within each scale's block.
        let mut offset = 0;
        for &(p, _) in &cfg.scales {
            for b in 0..p + 2 {
                let expect = if b == p { 1.0 } else { 0.0 };
                assert_eq!(f.values[offset + b], expect);
            }
            offset += p + 2;
        }
    }

    #[test]
    fn single_scale_multiscale_equals_uniform_histogram_and_folded_raw() {
        let img = random_gray(11, 10, 10);
        let cfg = LbpConfig {
            scales: vec![(8, 1.0)],
        };
        let multi = multiscale_lbp(&img, &cfg).unwrap();
        let uni = uniform_lbp_histogram(&img, 8, 1.0).unwrap();
        assert_eq!(multi.values, uni.values);
        let raw = lbp_histogram(&img, 8, 1.0).unwrap();
        let mut folded = [0.0f64; 10];
        for (code, v) in raw.values.iter().enumerate() {
            folded[uniform_bin(code as u32, 8)] += v;
        }
        for (a, b) in folded.iter().zip(&uni.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn histogram_sums_to_one(seed in any::<u64>(), h in 5usize..12, w in 5usize..12) {
            let img = random_gray(seed, h, w);
            let s: f64 = uniform_lbp_histogram(&img, 8, 2.0).unwrap().values.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }

        #[test]
        fn codes_invariant_to_constant_shift(seed in any::<u64>(), shift in -1.0f64..1.0) {
            let img = random_gray(seed, 9, 9);
            let mut shifted = img.clone();
            shifted.data_mut().iter_mut().for_each(|v| *v += shift);
            prop_assert_eq!(lbp_codes(&img, 8, 1.0).unwrap(), lbp_codes(&shifted, 8, 1.0).unwrap());
            prop_assert_eq!(lbp_codes(&img, 16, 2.0).unwrap(), lbp_codes(&shifted, 16, 2.0).unwrap());
        }
    }
}
