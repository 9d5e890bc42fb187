use std::path::Path;

use rayon::prelude::*;

use super::kernel::{latent_covariance, median_pairwise_distance, rbf_kernel};
use super::laplace::{laplace_log_marginal, laplace_mode, LaplaceOptions, LaplacePredictor};
use super::{GpPrediction, KernelKind, KernelParams, LabeledFeatures};
use crate::codec::{read_file, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::linalg::{Cholesky, Matrix};
use crate::scalar::Scalar;

const GP_MAGIC: &[u8; 8] = b"DGPGPFIT";
const GP_VERSION: u32 = 1;

/// A Laplace GP classifier fitted to a training set; immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct GpClassifier<T> {
    params: KernelParams,
    features: Matrix<T>,
    targets: Vec<T>,
    mode: Vec<T>,
    predictor: LaplacePredictor<T>,
}

impl<T: Scalar> GpClassifier<T> {
    /// Find the mode for `train` under `params` and factor the predictive
    /// covariance. The prior mean comes from `params`.
    pub fn fit(
        train: &LabeledFeatures<T>,
        params: &KernelParams,
        opts: &LaplaceOptions,
    ) -> Result<Self> {
        Ok(Self::fit_with_evidence(train, params, opts)?.0)
    }

    /// Like [`GpClassifier::fit`], also returning the log evidence.
    pub fn fit_with_evidence(
        train: &LabeledFeatures<T>,
        params: &KernelParams,
        opts: &LaplaceOptions,
    ) -> Result<(Self, T)> {
        params.validate()?;
        super::check_binary(&train.targets)?;
        let opts = LaplaceOptions {
            prior_mean: params.prior_mean,
            ..*opts
        };
        let k_a = latent_covariance(&train.features, params)?;
        let state = laplace_mode(&k_a, &train.targets, &opts)?;
        let evidence = laplace_log_marginal(&state, &train.targets)?;
        let predictor = LaplacePredictor::new(&state, &k_a, &train.targets)?;
        Ok((
            GpClassifier {
                params: *params,
                features: train.features.clone(),
                targets: train.targets.clone(),
                mode: state.mode,
                predictor,
            },
            evidence,
        ))
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn features(&self) -> &Matrix<T> {
        &self.features
    }

    pub fn targets(&self) -> &[T] {
        &self.targets
    }

    pub fn mode(&self) -> &[T] {
        &self.mode
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn predict_one(&self, x: &[T]) -> Result<GpPrediction<T>> {
        if !self.is_empty() && x.len() != self.features.cols() {
            return Err(Error::Shape(format!(
                "test point has {} features, model expects {}",
                x.len(),
                self.features.cols()
            )));
        }
        let k_star: Vec<T> = (0..self.len())
            .map(|i| rbf_kernel(self.features.row(i), x, &self.params))
            .collect::<Result<_>>()?;
        let k_ss = T::c(self.params.signal_variance);
        self.predictor.predict(&k_star, k_ss)
    }

    /// Predictions for every row of `x`, evaluated in parallel.
    pub fn predict(&self, x: &Matrix<T>) -> Result<Vec<GpPrediction<T>>> {
        if !self.is_empty() && x.rows() > 0 && x.cols() != self.features.cols() {
            return Err(Error::Shape(format!(
                "test features have {} columns, model expects {}",
                x.cols(),
                self.features.cols()
            )));
        }
        (0..x.rows())
            .into_par_iter()
            .map(|i| self.predict_one(x.row(i)))
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(GP_MAGIC);
        w.u32(GP_VERSION);
        w.u8(match self.params.kind {
            KernelKind::Rbf => 0,
        });
        w.f64s([
            self.params.lengthscale,
            self.params.signal_variance,
            self.params.prior_mean,
            self.params.latent_noise,
            self.params.observation_noise,
        ]);
        w.u64(self.features.rows() as u64);
        w.u64(self.features.cols() as u64);
        w.f64s(self.features.as_slice().iter().map(|v| v.as_f64()));
        w.f64s(self.targets.iter().map(|v| v.as_f64()));
        w.f64s(self.mode.iter().map(|v| v.as_f64()));
        w.f64(self.predictor.factor.jitter().as_f64());
        w.f64s(
            self.predictor
                .factor
                .lower()
                .as_slice()
                .iter()
                .map(|v| v.as_f64()),
        );
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = ByteReader::new(bytes, path);
        r.expect_magic(GP_MAGIC)?;
        r.expect_version(GP_VERSION)?;
        let kind = match r.u8()? {
            0 => KernelKind::Rbf,
            k => return Err(r.corrupt(format!("unknown kernel kind {k}"))),
        };
        let v = r.f64s(5)?;
        let params = KernelParams {
            kind,
            lengthscale: v[0],
            signal_variance: v[1],
            prior_mean: v[2],
            latent_noise: v[3],
            observation_noise: v[4],
        };
        params
            .validate()
            .map_err(|e| r.corrupt(format!("stored kernel parameters invalid: {e}")))?;
        let n = r.count(8)?;
        let d = r.count(0)?;
        let cast = |v: Vec<f64>| -> Vec<T> { v.into_iter().map(T::c).collect() };
        let features = Matrix::from_row_major(n, d, cast(r.f64s(n * d)?))?;
        let targets = cast(r.f64s(n)?);
        super::check_binary(&targets).map_err(|e| r.corrupt(e.to_string()))?;
        let mode = cast(r.f64s(n)?);
        let jitter = T::c(r.f64()?);
        let lower = Matrix::from_row_major(n, n, cast(r.f64s(n * n)?))?;
        r.finish()?;
        let factor = Cholesky::from_lower(lower, jitter)?;
        let predictor =
            LaplacePredictor::from_parts(T::c(params.prior_mean), &mode, &targets, factor);
        Ok(GpClassifier {
            params,
            features,
            targets,
            mode,
            predictor,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?, path)
    }
}

/// Fit on `train` and predict every row of `test`.
pub fn gp_classify<T: Scalar>(
    train: &LabeledFeatures<T>,
    test: &Matrix<T>,
    params: &KernelParams,
) -> Result<Vec<GpPrediction<T>>> {
    GpClassifier::fit(train, params, &LaplaceOptions::default())?.predict(test)
}

/// Search space for [`fit_kernel`].
#[derive(Debug, Clone, PartialEq)]
pub struct KernelFitOptions {
    /// Lengthscale candidates as multiples of the median pairwise distance.
    pub lengthscale_factors: Vec<f64>,
    pub signal_variances: Vec<f64>,
    /// Rounds of multiplicative coordinate refinement after the grid.
    pub refine_rounds: usize,
    pub refine_factor: f64,
}

impl Default for KernelFitOptions {
    fn default() -> Self {
        KernelFitOptions {
            lengthscale_factors: vec![0.25, 0.5, 1.0, 2.0, 4.0],
            signal_variances: vec![0.5, 1.0, 2.0, 5.0, 10.0, 20.0],
            refine_rounds: 8,
            refine_factor: 1.5,
        }
    }
}

/// Maximize the Laplace log evidence over lengthscale and signal variance:
/// grid search, then coordinate steps by `refine_factor` that stay within
/// the range the grid spans. Other fields are taken from `base`. Returns the
/// chosen parameters and their evidence.
pub fn fit_kernel<T: Scalar>(
    train: &LabeledFeatures<T>,
    base: &KernelParams,
    laplace: &LaplaceOptions,
    opts: &KernelFitOptions,
) -> Result<(KernelParams, T)> {
    base.validate()?;
    super::check_binary(&train.targets)?;
    let laplace = LaplaceOptions {
        prior_mean: base.prior_mean,
        ..*laplace
    };
    let evidence = |p: &KernelParams| -> Result<T> {
        let k_a = latent_covariance(&train.features, p)?;
        let state = laplace_mode(&k_a, &train.targets, &laplace)?;
        laplace_log_marginal(&state, &train.targets)
    };
    let median = median_pairwise_distance(&train.features)
        .filter(|d| *d > 0.0 && d.is_finite())
        .unwrap_or(1.0);
    let grid: Vec<KernelParams> = opts
        .lengthscale_factors
        .iter()
        .flat_map(|&lf| {
            opts.signal_variances.iter().map(move |&sv| KernelParams {
                lengthscale: median * lf,
                signal_variance: sv,
                ..*base
            })
        })
        .collect();
    let scored: Vec<Result<T>> = grid.par_iter().map(&evidence).collect();

    let mut best: Option<(KernelParams, T)> = None;
    let mut first_err = None;
    for (p, s) in grid.iter().zip(scored) {
        match s {
            Ok(e) if e.is_finite() => {
                if best.as_ref().is_none_or(|(_, b)| e > *b) {
                    best = Some((*p, e));
                }
            }
            Ok(_) => {}
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    let Some((mut params, mut score)) = best else {
        return Err(
            first_err.unwrap_or_else(|| Error::InvalidArgument("empty kernel search grid".into()))
        );
    };

    // Refinement stays inside the box spanned by the grid.
    let span = |v: &[f64]| {
        v.iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
                (lo.min(x), hi.max(x))
            })
    };
    let (lf_lo, lf_hi) = span(&opts.lengthscale_factors);
    let (sv_lo, sv_hi) = span(&opts.signal_variances);
    let in_box = |p: &KernelParams| {
        let slack = 1.0 + 1e-12;
        p.lengthscale >= median * lf_lo / slack
            && p.lengthscale <= median * lf_hi * slack
            && p.signal_variance >= sv_lo / slack
            && p.signal_variance <= sv_hi * slack
    };
    let f = opts.refine_factor;
    for _ in 0..opts.refine_rounds {
        let candidates = [
            KernelParams {
                lengthscale: params.lengthscale * f,
                ..params
            },
            KernelParams {
                lengthscale: params.lengthscale / f,
                ..params
            },
            KernelParams {
                signal_variance: params.signal_variance * f,
                ..params
            },
            KernelParams {
                signal_variance: params.signal_variance / f,
                ..params
            },
        ];
        let candidates: Vec<KernelParams> = candidates.into_iter().filter(|p| in_box(p)).collect();
        let scored: Vec<Result<T>> = candidates.par_iter().map(&evidence).collect();
        let mut improved = false;
        for (p, s) in candidates.iter().zip(scored) {
            if let Ok(e) = s {
                if e.is_finite() && e > score {
                    params = *p;
                    score = e;
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
    Ok((params, score))
}
