//! Gray-level co-occurrence matrices and their Haralick-style properties.

use serde::{Deserialize, Serialize};

use super::FeatureVector;
use crate::error::{Error, Result};
use crate::imagekit::ImageTensor;
use crate::linalg::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlcmConfig {
    pub levels: usize,
    /// `(row delta, column delta)` pairs.
    pub offsets: Vec<(isize, isize)>,
    pub symmetric: bool,
    pub normalized: bool,
}

impl Default for GlcmConfig {
    fn default() -> Self {
        GlcmConfig {
            levels: 8,
            offsets: vec![(0, 1), (1, 0), (1, 1), (1, -1)],
            symmetric: true,
            normalized: true,
        }
    }
}

impl GlcmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels < 2 || self.levels > u16::MAX as usize {
            return Err(Error::InvalidArgument(format!(
                "GLCM levels must be in [2, 65535], got {}",
                self.levels
            )));
        }
        if self.offsets.is_empty() {
            return Err(Error::InvalidArgument("GLCM config has no offsets".into()));
        }
        if self.offsets.contains(&(0, 0)) {
            return Err(Error::InvalidArgument(
                "GLCM offset (0,0) is not allowed".into(),
            ));
        }
        Ok(())
    }

    pub fn feature_len(&self) -> usize {
        GLCM_PROPERTIES.len() * self.offsets.len()
    }

    pub fn descriptor_id(&self) -> String {
        let offs: Vec<String> = self
            .offsets
            .iter()
            .map(|(r, c)| format!("{r},{c}"))
            .collect();
        format!("glcm[l{};{}]", self.levels, offs.join(";"))
    }
}

pub const GLCM_PROPERTIES: [&str; 6] = [
    "contrast",
    "dissimilarity",
    "homogeneity",
    "energy",
    "correlation",
    "asm",
];

/// Integer gray levels in `0..levels`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedImage {
    pub height: usize,
    pub width: usize,
    pub levels: usize,
    pub data: Vec<u16>,
}

impl QuantizedImage {
    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u16 {
        self.data[y * self.width + x]
    }
}

/// `level = min(floor(v · levels), levels − 1)` for `v ∈ [0,1]`.
pub fn quantize_gray<T: Scalar>(gray: &ImageTensor<T>, levels: usize) -> Result<QuantizedImage> {
    if gray.channels() != 1 {
        return Err(Error::Shape(format!(
            "quantization needs a single-channel image, got {} channels",
            gray.channels()
        )));
    }
    if levels < 2 || levels > u16::MAX as usize {
        return Err(Error::InvalidArgument(format!(
            "invalid level count {levels}"
        )));
    }
    let scale = levels as f64;
    let data = gray
        .data()
        .iter()
        .map(|v| {
            let v = v.as_f64();
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!(
                    "gray value {v} outside [0,1]; quantize before normalization"
                )));
            }
            Ok(((v * scale).floor() as usize).min(levels - 1) as u16)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(QuantizedImage {
        height: gray.height(),
        width: gray.width(),
        levels,
        data,
    })
}

/// One co-occurrence matrix per configured offset.
pub fn glcm<T: Scalar>(q: &QuantizedImage, cfg: &GlcmConfig) -> Result<Vec<Matrix<T>>> {
    cfg.validate()?;
    if let Some(&bad) = q.data.iter().find(|&&v| v as usize >= cfg.levels) {
        return Err(Error::InvalidArgument(format!(
            "gray level {bad} overflows {} levels",
            cfg.levels
        )));
    }
    let n = cfg.levels;
    let (h, w) = (q.height as isize, q.width as isize);
    cfg.offsets
        .iter()
        .map(|&(dr, dc)| {
            let mut counts = vec![0u64; n * n];
            for y in 0..h {
                let y2 = y + dr;
                if y2 < 0 || y2 >= h {
                    continue;
                }
                for x in 0..w {
                    let x2 = x + dc;
                    if x2 < 0 || x2 >= w {
                        continue;
                    }
                    let i = q.get(y as usize, x as usize) as usize;
                    let j = q.get(y2 as usize, x2 as usize) as usize;
                    counts[i * n + j] += 1;
                    if cfg.symmetric {
                        counts[j * n + i] += 1;
                    }
                }
            }
            let total: u64 = counts.iter().sum();
            let scale = if cfg.normalized && total > 0 {
                T::one() / T::c(total as f64)
            } else {
                T::one()
            };
            Matrix::from_row_major(
                n,
                n,
                counts.into_iter().map(|c| T::c(c as f64) * scale).collect(),
            )
        })
        .collect()
}

/// `[contrast, dissimilarity, homogeneity, energy, correlation, ASM]` of a
/// normalized matrix. Correlation is 1 when either marginal has zero variance.
pub fn glcm_properties<T: Scalar>(p: &Matrix<T>) -> Result<[T; 6]> {
    if !p.is_square() {
        return Err(Error::Shape("GLCM must be square".into()));
    }
    let total: T = p.as_slice().iter().copied().sum();
    if (total - T::one()).abs() > T::c(1e-6) {
        return Err(Error::InvalidArgument(format!(
            "GLCM properties need a normalized matrix, entries sum to {total}"
        )));
    }
    let n = p.rows();
    let (mut contrast, mut dissimilarity, mut homogeneity, mut asm) =
        (T::zero(), T::zero(), T::zero(), T::zero());
    let (mut mu_i, mut mu_j) = (T::zero(), T::zero());
    for i in 0..n {
        for j in 0..n {
            let v = p[(i, j)];
            let d = T::from_count(i) - T::from_count(j);
            contrast += v * d * d;
            dissimilarity += v * d.abs();
            homogeneity += v / (T::one() + d * d);
            asm += v * v;
            mu_i += v * T::from_count(i);
            mu_j += v * T::from_count(j);
        }
    }
    let (mut var_i, mut var_j, mut cov) = (T::zero(), T::zero(), T::zero());
    for i in 0..n {
        for j in 0..n {
            let v = p[(i, j)];
            let di = T::from_count(i) - mu_i;
            let dj = T::from_count(j) - mu_j;
            var_i += v * di * di;
            var_j += v * dj * dj;
            cov += v * di * dj;
        }
    }
    let denom = (var_i * var_j).sqrt();
    let correlation = if denom > T::c(1e-15) {
        cov / denom
    } else {
        T::one()
    };
    Ok([
        contrast,
        dissimilarity,
        homogeneity,
        asm.sqrt(),
        correlation,
        asm,
    ])
}

/// Quantize, build the normalized matrices and emit six properties per offset.
pub fn glcm_features<T: Scalar>(
    gray: &ImageTensor<T>,
    cfg: &GlcmConfig,
) -> Result<FeatureVector<T>> {
    let normalized = GlcmConfig {
        normalized: true,
        ..cfg.clone()
    };
    let q = quantize_gray(gray, cfg.levels)?;
    let mut values = Vec::with_capacity(cfg.feature_len());
    for m in glcm::<T>(&q, &normalized)? {
        values.extend(glcm_properties(&m)?);
    }
    Ok(FeatureVector::new(values, cfg.descriptor_id()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn qimg(h: usize, w: usize, levels: usize, data: Vec<u16>) -> QuantizedImage {
        QuantizedImage {
            height: h,
            width: w,
            levels,
            data,
        }
    }

    #[test]
    fn quantization_formula() {
        let img = ImageTensor::new(1, 3, 1, vec![0.0f64, 1.0, 0.5]).unwrap();
        assert_eq!(quantize_gray(&img, 8).unwrap().data, vec![0, 7, 4]);
        let bad = ImageTensor::new(1, 1, 1, vec![-0.1f64]).unwrap();
        assert!(quantize_gray(&bad, 8).is_err());
    }

    #[test]
    fn quantization_matches_oracle_on_random_image() {
        let mut rng = stream_rng(4, 0, 0);
        let img = ImageTensor::from_fn(7, 9, 1, |_, _, _| rng.random::<f64>());
        let q = quantize_gray(&img, 13).unwrap();
        for (v, l) in img.data().iter().zip(&q.data) {
            assert_eq!(*l as usize, ((v * 13.0).floor() as usize).min(12));
        }
    }

    #[test]
    fn constant_image_single_entry() {
        let q = qimg(4, 4, 8, vec![3; 16]);
        let cfg = GlcmConfig::default();
        for m in glcm::<f64>(&q, &cfg).unwrap() {
            assert_eq!(m[(3, 3)], 1.0);
            assert_eq!(m.as_slice().iter().sum::<f64>(), 1.0);
            assert_eq!(glcm_properties(&m).unwrap(), [0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
        }
    }

    #[test]
    fn two_by_two_example() {
        let q = qimg(2, 2, 2, vec![0, 1, 0, 1]);
        let cfg = GlcmConfig {
            levels: 2,
            offsets: vec![(0, 1)],
            symmetric: true,
            normalized: true,
        };
        let m = &glcm::<f64>(&q, &cfg).unwrap()[0];
        assert_eq!(m.as_slice(), &[0.0, 0.5, 0.5, 0.0]);
        let props = glcm_properties(m).unwrap();
        assert_eq!(props[0], 1.0);
        assert_eq!(props[1], 1.0);
        assert_eq!(props[2], 0.5);
        assert!((props[3] - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((props[4] + 1.0).abs() < 1e-15);
        assert_eq!(props[5], 0.5);
    }

    #[test]
    fn matches_pair_count_oracle() {
        let mut rng = stream_rng(8, 0, 0);
        let data: Vec<u16> = (0..64).map(|_| rng.random_range(0..8)).collect();
        let q = qimg(8, 8, 8, data.clone());
        let cfg = GlcmConfig {
            normalized: false,
            ..GlcmConfig::default()
        };
        let mats = glcm::<f64>(&q, &cfg).unwrap();
        for (m, &(dr, dc)) in mats.iter().zip(&cfg.offsets) {
            for i in 0..8u16 {
                for j in 0..8u16 {
                    let mut count = 0;
                    for y in 0..8isize {
                        for x in 0..8isize {
                            let (y2, x2) = (y + dr, x + dc);
                            if !(0..8).contains(&y2) || !(0..8).contains(&x2) {
                                continue;
                            }
                            let a = data[(y * 8 + x) as usize];
                            let b = data[(y2 * 8 + x2) as usize];
                            if a == i && b == j {
                                count += 1;
                            }
                            if a == j && b == i {
                                count += 1;
                            }
                        }
                    }
                    assert_eq!(m[(i as usize, j as usize)], count as f64);
                }
            }
        }
    }

    #[test]
    fn properties_match_direct_summation() {
        let mut rng = stream_rng(2, 0, 0);
        let raw: Vec<f64> = (0..25).map(|_| rng.random::<f64>()).collect();
        let s: f64 = raw.iter().sum();
        let p = Matrix::from_row_major(5, 5, raw.iter().map(|v| v / s).collect()).unwrap();
        let props = glcm_properties(&p).unwrap();
        let at = |i: usize, j: usize| p[(i, j)];
        let idx = || (0..5).flat_map(|i| (0..5).map(move |j| (i, j)));
        let contrast: f64 = idx()
            .map(|(i, j)| at(i, j) * ((i as f64 - j as f64).powi(2)))
            .sum();
        let dis: f64 = idx()
            .map(|(i, j)| at(i, j) * (i as f64 - j as f64).abs())
            .sum();
        let hom: f64 = idx()
            .map(|(i, j)| at(i, j) / (1.0 + (i as f64 - j as f64).powi(2)))
            .sum();
        let asm: f64 = idx().map(|(i, j)| at(i, j).powi(2)).sum();
        let mi: f64 = idx().map(|(i, j)| i as f64 * at(i, j)).sum();
        let mj: f64 = idx().map(|(i, j)| j as f64 * at(i, j)).sum();
        let si: f64 = idx()
            .map(|(i, j)| (i as f64 - mi).powi(2) * at(i, j))
            .sum::<f64>()
            .sqrt();
        let sj: f64 = idx()
            .map(|(i, j)| (j as f64 - mj).powi(2) * at(i, j))
            .sum::<f64>()
            .sqrt();
        let corr: f64 = idx()
            .map(|(i, j)| (i as f64 - mi) * (j as f64 - mj) * at(i, j))
            .sum::<f64>()
            / (si * sj);
        let expect = [contrast, dis, hom, asm.sqrt(), corr, asm];
        for (a, b) in props.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn rejects_overflow_and_unnormalized() {
        let q = qimg(1, 2, 8, vec![0, 9]);
        assert!(glcm::<f64>(&q, &GlcmConfig::default()).is_err());
        let m = Matrix::from_row_major(2, 2, vec![1.0f64, 1.0, 0.0, 0.0]).unwrap();
        assert!(glcm_properties(&m).is_err());
    }

    #[test]
    fn default_feature_length_is_24() {
        let img = ImageTensor::from_fn(10, 10, 1, |y, x, _| ((y * 3 + x) % 10) as f64 / 10.0);
        let f = glcm_features(&img, &GlcmConfig::default()).unwrap();
        assert_eq!(f.values.len(), 24);
    }

    proptest! {
        #[test]
        fn symmetric_glcm_is_symmetric(data in prop::collection::vec(0u16..6, 30)) {
            let q = qimg(5, 6, 6, data);
            let cfg = GlcmConfig { levels: 6, ..GlcmConfig::default() };
            for m in glcm::<f64>(&q, &cfg).unwrap() {
                prop_assert_eq!(m.max_abs_asymmetry(), 0.0);
            }
        }
    }
}
