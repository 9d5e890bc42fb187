//! Orthonormal 2-D Haar transform and multi-scale wavelet statistics.

use serde::{Deserialize, Serialize};

use super::FeatureVector;
use crate::error::{Error, Result};
use crate::imagekit::ImageTensor;
use crate::linalg::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WaveletConfig {
    pub levels: usize,
}

impl Default for WaveletConfig {
    fn default() -> Self {
        WaveletConfig { levels: 3 }
    }
}

impl WaveletConfig {
    /// channels × levels × 3 subbands × (mean, variance).
    pub fn feature_len(&self, channels: usize) -> usize {
        channels * self.levels * 3 * 2
    }

    pub fn descriptor_id(&self) -> String {
        format!("msws[haar;{}]", self.levels)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HaarBands<T> {
    pub ll: Matrix<T>,
    pub lh: Matrix<T>,
    pub hl: Matrix<T>,
    pub hh: Matrix<T>,
}

impl<T: Scalar> HaarBands<T> {
    pub fn details(&self) -> [&Matrix<T>; 3] {
        [&self.lh, &self.hl, &self.hh]
    }
}

/// One level on 2×2 blocks `[[a,b],[c,d]]`:
/// `LL=(a+b+c+d)/2, LH=(a−b+c−d)/2, HL=(a+b−c−d)/2, HH=(a−b−c+d)/2`.
pub fn haar_dwt2<T: Scalar>(x: &Matrix<T>) -> Result<HaarBands<T>> {
    if !x.rows().is_multiple_of(2) || !x.cols().is_multiple_of(2) || x.rows() == 0 || x.cols() == 0
    {
        return Err(Error::Shape(format!(
            "Haar transform needs even, nonzero sides, got {}x{}",
            x.rows(),
            x.cols()
        )));
    }
    let (h, w) = (x.rows() / 2, x.cols() / 2);
    let half = T::c(0.5);
    let mut ll = Matrix::zeros(h, w);
    let mut lh = Matrix::zeros(h, w);
    let mut hl = Matrix::zeros(h, w);
    let mut hh = Matrix::zeros(h, w);
    for i in 0..h {
        for j in 0..w {
            let a = x[(2 * i, 2 * j)];
            let b = x[(2 * i, 2 * j + 1)];
            let c = x[(2 * i + 1, 2 * j)];
            let d = x[(2 * i + 1, 2 * j + 1)];
            ll[(i, j)] = (a + b + c + d) * half;
            lh[(i, j)] = (a - b + c - d) * half;
            hl[(i, j)] = (a + b - c - d) * half;
            hh[(i, j)] = (a - b - c + d) * half;
        }
    }
    Ok(HaarBands { ll, lh, hl, hh })
}

pub fn haar_idwt2<T: Scalar>(bands: &HaarBands<T>) -> Result<Matrix<T>> {
    let (h, w) = (bands.ll.rows(), bands.ll.cols());
    if bands
        .details()
        .iter()
        .any(|b| b.rows() != h || b.cols() != w)
    {
        return Err(Error::Shape("Haar subbands differ in size".into()));
    }
    let half = T::c(0.5);
    let mut x = Matrix::zeros(2 * h, 2 * w);
    for i in 0..h {
        for j in 0..w {
            let (s, p, q, r) = (
                bands.ll[(i, j)],
                bands.lh[(i, j)],
                bands.hl[(i, j)],
                bands.hh[(i, j)],
            );
            x[(2 * i, 2 * j)] = (s + p + q + r) * half;
            x[(2 * i, 2 * j + 1)] = (s - p + q - r) * half;
            x[(2 * i + 1, 2 * j)] = (s + p - q - r) * half;
            x[(2 * i + 1, 2 * j + 1)] = (s - p - q + r) * half;
        }
    }
    Ok(x)
}

/// Edge-replicate to even side lengths.
pub fn pad_even<T: Scalar>(x: &Matrix<T>) -> Matrix<T> {
    let h = x.rows() + x.rows() % 2;
    let w = x.cols() + x.cols() % 2;
    if h == x.rows() && w == x.cols() {
        return x.clone();
    }
    Matrix::from_fn(h, w, |i, j| x[(i.min(x.rows() - 1), j.min(x.cols() - 1))])
}

/// Multi-level decomposition: detail bands per level (finest first), with the
/// approximation padded to even size before each level.
pub fn haar_decompose<T: Scalar>(x: &Matrix<T>, levels: usize) -> Result<Vec<HaarBands<T>>> {
    if levels == 0 {
        return Err(Error::InvalidArgument("wavelet levels must be >= 1".into()));
    }
    let min_side = 1usize << levels;
    if x.rows() < min_side || x.cols() < min_side {
        return Err(Error::InvalidArgument(format!(
            "{}x{} input too small for {levels} Haar levels",
            x.rows(),
            x.cols()
        )));
    }
    let mut out = Vec::with_capacity(levels);
    let mut current = x.clone();
    for _ in 0..levels {
        let bands = haar_dwt2(&pad_even(&current))?;
        current = bands.ll.clone();
        out.push(bands);
    }
    Ok(out)
}

/// Inverse of [`haar_decompose`] for inputs whose sides are divisible by
/// `2^levels` (no padding involved).
pub fn haar_reconstruct<T: Scalar>(levels: &[HaarBands<T>]) -> Result<Matrix<T>> {
    let mut current: Option<Matrix<T>> = None;
    for bands in levels.iter().rev() {
        let b = match current {
            Some(ll) => HaarBands {
                ll,
                lh: bands.lh.clone(),
                hl: bands.hl.clone(),
                hh: bands.hh.clone(),
            },
            None => bands.clone(),
        };
        current = Some(haar_idwt2(&b)?);
    }
    current.ok_or_else(|| Error::InvalidArgument("no levels to reconstruct".into()))
}

fn mean_and_variance<T: Scalar>(m: &Matrix<T>) -> (T, T) {
    let n = T::from_count(m.as_slice().len());
    let mean = m.as_slice().iter().copied().sum::<T>() / n;
    let var = m
        .as_slice()
        .iter()
        .map(|&v| (v - mean) * (v - mean))
        .sum::<T>()
        / n;
    (mean, var)
}

/// Mean and population variance of each detail band; emitted channel-major,
/// then level, then subband (LH, HL, HH), then (mean, variance).
pub fn msws_features<T: Scalar>(
    img: &ImageTensor<T>,
    cfg: &WaveletConfig,
) -> Result<FeatureVector<T>> {
    if img.channels() != 3 {
        return Err(Error::Shape(format!(
            "wavelet statistics need 3 channels, image has {}",
            img.channels()
        )));
    }
    let mut values = Vec::with_capacity(cfg.feature_len(3));
    for c in 0..3 {
        let plane = Matrix::from_row_major(img.height(), img.width(), img.plane(c))?;
        for bands in haar_decompose(&plane, cfg.levels)? {
            for band in bands.details() {
                let (m, v) = mean_and_variance(band);
                values.push(m);
                values.push(v);
            }
        }
    }
    Ok(FeatureVector::new(values, cfg.descriptor_id()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs_diff;
    use crate::rng::stream_rng;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn random_matrix(seed: u64, h: usize, w: usize) -> Matrix<f64> {
        let mut rng = stream_rng(seed, 0, 0);
        Matrix::from_fn(h, w, |_, _| rng.random::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn single_block_example() {
        let x = Matrix::from_row_major(2, 2, vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let b = haar_dwt2(&x).unwrap();
        assert_eq!(b.ll[(0, 0)], 5.0);
        assert_eq!(b.lh[(0, 0)], -1.0);
        assert_eq!(b.hl[(0, 0)], -2.0);
        assert_eq!(b.hh[(0, 0)], 0.0);
    }

    #[test]
    fn constant_input_has_no_detail() {
        let x = Matrix::from_fn(6, 4, |_, _| 0.37f64);
        let b = haar_dwt2(&x).unwrap();
        for d in b.details() {
            assert!(d.as_slice().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn odd_sides_are_rejected_then_padded() {
        let x = Matrix::from_fn(3, 4, |i, j| (i + j) as f64);
        assert!(haar_dwt2(&x).is_err());
        let p = pad_even(&x);
        assert_eq!((p.rows(), p.cols()), (4, 4));
        assert_eq!(p.row(3), x.row(2));
    }

    #[test]
    fn three_level_round_trip() {
        let x = random_matrix(1, 16, 24);
        let levels = haar_decompose(&x, 3).unwrap();
        let back = haar_reconstruct(&levels).unwrap();
        assert!(max_abs_diff(back.as_slice(), x.as_slice()) <= 1e-12);
    }

    #[test]
    fn second_level_matches_direct_four_by_four_blocks() {
        let x = random_matrix(2, 8, 12);
        let levels = haar_decompose(&x, 2).unwrap();
        let second = &levels[1];
        for bi in 0..2 {
            for bj in 0..3 {
                // Quadrant sums of the 4x4 block.
                let q = |qi: usize, qj: usize| {
                    let mut s = 0.0;
                    for i in 0..2 {
                        for j in 0..2 {
                            s += x[(4 * bi + 2 * qi + i, 4 * bj + 2 * qj + j)];
                        }
                    }
                    s
                };
                let (a, b, c, d) = (q(0, 0), q(0, 1), q(1, 0), q(1, 1));
                assert!((second.ll[(bi, bj)] - (a + b + c + d) / 4.0).abs() < 1e-12);
                assert!((second.lh[(bi, bj)] - (a - b + c - d) / 4.0).abs() < 1e-12);
                assert!((second.hl[(bi, bj)] - (a + b - c - d) / 4.0).abs() < 1e-12);
                assert!((second.hh[(bi, bj)] - (a - b - c + d) / 4.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn msws_length_and_constant_image() {
        let img = ImageTensor::filled(32, 32, 3, 0.4f64);
        let f = msws_features(&img, &WaveletConfig::default()).unwrap();
        assert_eq!(f.values.len(), 54);
        assert!(f.values.iter().all(|&v| v == 0.0));
        let tiny = ImageTensor::filled(7, 7, 3, 0.4f64);
        assert!(msws_features(&tiny, &WaveletConfig::default()).is_err());
    }

    #[test]
    fn msws_matches_materialized_subband_oracle() {
        let mut rng = stream_rng(5, 0, 0);
        let img = ImageTensor::from_fn(16, 16, 3, |_, _, _| rng.random::<f64>());
        let f = msws_features(&img, &WaveletConfig::default()).unwrap();
        let mut expect = Vec::new();
        for c in 0..3 {
            let mut ll: Vec<Vec<f64>> = (0..16)
                .map(|y| (0..16).map(|x| img.get(y, x, c)).collect())
                .collect();
            for _ in 0..3 {
                let n = ll.len() / 2;
                let mut next = vec![vec![0.0; n]; n];
                let mut bands = [Vec::new(), Vec::new(), Vec::new()];
                for i in 0..n {
                    for j in 0..n {
                        let (a, b, cc, d) = (
                            ll[2 * i][2 * j],
                            ll[2 * i][2 * j + 1],
                            ll[2 * i + 1][2 * j],
                            ll[2 * i + 1][2 * j + 1],
                        );
                        next[i][j] = (a + b + cc + d) / 2.0;
                        bands[0].push((a - b + cc - d) / 2.0);
                        bands[1].push((a + b - cc - d) / 2.0);
                        bands[2].push((a - b - cc + d) / 2.0);
                    }
                }
                for band in &bands {
                    let m = band.iter().sum::<f64>() / band.len() as f64;
                    let v = band.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / band.len() as f64;
                    expect.push(m);
                    expect.push(v);
                }
                ll = next;
            }
        }
        assert!(max_abs_diff(&f.values, &expect) < 1e-12);
    }

    proptest! {
        #[test]
        fn msws_ignores_constant_offsets(seed in any::<u64>(), shift in -0.5f64..0.5, side in 8usize..20) {
            let mut rng = stream_rng(seed, 0, 0);
            let img = ImageTensor::from_fn(side, side + 3, 3, |_, _, _| rng.random::<f64>());
            let mut shifted = img.clone();
            shifted.data_mut().iter_mut().for_each(|v| *v += shift);
            let a = msws_features(&img, &WaveletConfig::default()).unwrap();
            let b = msws_features(&shifted, &WaveletConfig::default()).unwrap();
            prop_assert!(max_abs_diff(&a.values, &b.values) < 1e-10);
        }
    }
}
