//! Numerical self-checks: each oracle recomputes a library result by an
//! independent route (dense inversion, bisection, quadrature, finite
//! differences, brute-force loops, scalar recurrences) and compares.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng as _;

use crate::cnn::{adam_step, AdamHyper, AdamState, Mode, NetworkConfig, NetworkParams, Tensor4};
use crate::error::{Error, Result};
use crate::features::{
    glcm, haar_decompose, haar_reconstruct, lbp_codes, msws_features, quantize_gray,
    uniform_lbp_histogram, GlcmConfig, WaveletConfig,
};
use crate::gp::{
    gp_regression_posterior, laplace_mode, probit_predictive, KernelParams, LabeledFeatures,
    LaplaceOptions,
};
use crate::imagekit::ImageTensor;
use crate::linalg::Matrix;
use crate::rng::{stream, stream_rng, Rng};
use crate::scalar::sigmoid;

/// Oracle groups selectable with `--only`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Family {
    Gp,
    Laplace,
    Probit,
    Cnn,
    Features,
    Adam,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::Gp,
        Family::Laplace,
        Family::Probit,
        Family::Cnn,
        Family::Features,
        Family::Adam,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Gp => "gp",
            Family::Laplace => "laplace",
            Family::Probit => "probit",
            Family::Cnn => "cnn",
            Family::Features => "features",
            Family::Adam => "adam",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s.to_ascii_lowercase())
            .ok_or_else(|| {
                let names: Vec<&str> = Family::ALL.iter().map(|f| f.name()).collect();
                Error::InvalidArgument(format!(
                    "unknown oracle family '{s}'; valid families: {}",
                    names.join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VerifyOptions {
    /// Families to run; empty runs all.
    pub only: Vec<Family>,
    /// Fault injection: shifts the library-side value of every oracle in
    /// this family so the suite's failure reporting can be exercised.
    pub perturb: Option<Family>,
    pub seed: u64,
}

/// Outcome of one oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub family: Family,
    pub name: &'static str,
    pub passed: bool,
    /// The worst observed discrepancy (or count, for exact checks).
    pub measured: f64,
    pub threshold: f64,
    pub detail: String,
    pub seconds: f64,
}

const PERTURBATION: f64 = 0.05;

struct Ctx {
    seed: u64,
    perturb: Option<Family>,
}

impl Ctx {
    fn rng(&self, index: u64) -> Rng {
        stream_rng(self.seed, stream::VERIFY, index)
    }

    fn bump(&self, family: Family) -> f64 {
        if self.perturb == Some(family) {
            PERTURBATION
        } else {
            0.0
        }
    }
}

struct Outcome {
    measured: f64,
    threshold: f64,
    passed: bool,
    detail: String,
}

impl Outcome {
    /// Passes when `measured ≤ threshold`.
    fn at_most(measured: f64, threshold: f64, detail: impl Into<String>) -> Self {
        Outcome {
            measured,
            threshold,
            passed: measured <= threshold,
            detail: detail.into(),
        }
    }
}

type OracleFn = fn(&Ctx) -> Result<Outcome>;

const ORACLES: &[(Family, &str, OracleFn)] = &[
    (Family::Gp, "gp-regression-dense", gp_regression_dense),
    (Family::Gp, "gp-noise-free-interpolation", gp_noise_free),
    (Family::Laplace, "laplace-scalar-bisection", laplace_scalar),
    (
        Family::Laplace,
        "laplace-random-fixed-point",
        laplace_random,
    ),
    (Family::Probit, "probit-quadrature-grid", probit_grid),
    (Family::Cnn, "cnn-gradient-check", cnn_gradient_check),
    (Family::Cnn, "cnn-dense-channels", cnn_dense_channels),
    (Family::Features, "features-lbp-bruteforce", lbp_bruteforce),
    (
        Family::Features,
        "features-glcm-bruteforce",
        glcm_bruteforce,
    ),
    (Family::Features, "features-haar-roundtrip", haar_roundtrip),
    (Family::Features, "features-msws-shape", msws_shape),
    (Family::Adam, "adam-scalar-recurrence", adam_recurrence),
];

/// Names of every registered oracle with its family.
pub fn oracle_names() -> Vec<(Family, &'static str)> {
    ORACLES.iter().map(|&(f, n, _)| (f, n)).collect()
}

/// Runs the selected oracles in registration order. An oracle whose
/// library call errors is reported as failed with the error text.
pub fn run_verification(opts: &VerifyOptions) -> Vec<OracleReport> {
    let ctx = Ctx {
        seed: opts.seed,
        perturb: opts.perturb,
    };
    ORACLES
        .iter()
        .filter(|(f, _, _)| opts.only.is_empty() || opts.only.contains(f))
        .map(|&(family, name, run)| {
            let start = Instant::now();
            let outcome = run(&ctx).unwrap_or_else(|e| Outcome {
                measured: f64::NAN,
                threshold: f64::NAN,
                passed: false,
                detail: format!("error: {e}"),
            });
            OracleReport {
                family,
                name,
                passed: outcome.passed,
                measured: outcome.measured,
                threshold: outcome.threshold,
                detail: outcome.detail,
                seconds: start.elapsed().as_secs_f64(),
            }
        })
        .collect()
}

// ---------------------------------------------------------------- GP

fn rbf(a: &[f64], b: &[f64], l: f64, sv: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    sv * (-0.5 * d2 / (l * l)).exp()
}

/// Gauss-Jordan inverse with partial pivoting.
fn gauss_jordan_inverse(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[piv][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, piv);
        let p = m[col][col];
        for v in m[col].iter_mut() {
            *v /= p;
        }
        for r in 0..n {
            if r != col {
                let f = m[r][col];
                if f != 0.0 {
                    for c in 0..2 * n {
                        m[r][c] -= f * m[col][c];
                    }
                }
            }
        }
    }
    Some(m.into_iter().map(|r| r[n..].to_vec()).collect())
}

struct DensePosterior {
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
}

fn dense_posterior(
    x: &[Vec<f64>],
    y: &[f64],
    xs: &[Vec<f64>],
    l: f64,
    sv: f64,
    noise: f64,
    mu: f64,
) -> Option<DensePosterior> {
    let n = x.len();
    let ky: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| rbf(&x[i], &x[j], l, sv) + if i == j { noise } else { 0.0 })
                .collect()
        })
        .collect();
    let inv = gauss_jordan_inverse(&ky)?;
    let ks: Vec<Vec<f64>> = xs
        .iter()
        .map(|s| x.iter().map(|xi| rbf(xi, s, l, sv)).collect())
        .collect();
    let resid: Vec<f64> = y.iter().map(|v| v - mu).collect();
    let apply = |v: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| (0..n).map(|j| inv[i][j] * v[j]).sum())
            .collect()
    };
    let w = apply(&resid);
    let mean = ks
        .iter()
        .map(|k| mu + k.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    let cov = (0..xs.len())
        .map(|p| {
            let ip = apply(&ks[p]);
            (0..xs.len())
                .map(|q| {
                    rbf(&xs[p], &xs[q], l, sv)
                        - ks[q].iter().zip(&ip).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect()
        })
        .collect();
    Some(DensePosterior { mean, cov })
}

fn to_matrix(rows: &[Vec<f64>]) -> Result<Matrix<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    Matrix::from_row_major(rows.len(), cols, rows.concat())
}

fn random_points(rng: &mut Rng, n: usize, d: usize, half_width: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            (0..d)
                .map(|_| rng.random_range(-half_width..half_width))
                .collect()
        })
        .collect()
}

fn gp_regression_dense(ctx: &Ctx) -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    for inst in 0..50u64 {
        let mut rng = ctx.rng(inst);
        let m = rng.random_range(1..=10);
        let d = rng.random_range(1..=4);
        let ns = rng.random_range(1..=5);
        let x = random_points(&mut rng, m, d, 2.0);
        let xs = random_points(&mut rng, ns, d, 2.5);
        let y: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let p = KernelParams {
            lengthscale: rng.random_range(0.5..2.0),
            signal_variance: rng.random_range(0.5..2.0),
            observation_noise: rng.random_range(0.05..1.0),
            prior_mean: rng.random_range(-0.5..0.5),
            ..KernelParams::default()
        };
        let oracle = dense_posterior(
            &x,
            &y,
            &xs,
            p.lengthscale,
            p.signal_variance,
            p.observation_noise,
            p.prior_mean,
        )
        .ok_or_else(|| Error::InvalidArgument("oracle matrix singular".into()))?;
        let post = gp_regression_posterior(
            &LabeledFeatures::new(to_matrix(&x)?, y)?,
            &to_matrix(&xs)?,
            &p,
        )?;
        let bump = ctx.bump(Family::Gp);
        let mean_scale = oracle
            .mean
            .iter()
            .fold(0.0f64, |a, v| a.max(v.abs()))
            .max(f64::MIN_POSITIVE);
        let mean_err = post
            .mean
            .iter()
            .zip(&oracle.mean)
            .fold(0.0f64, |a, (g, o)| a.max((g + bump - o).abs()));
        let cov_scale = oracle
            .cov
            .iter()
            .flatten()
            .fold(0.0f64, |a, v| a.max(v.abs()))
            .max(f64::MIN_POSITIVE);
        let mut cov_err: f64 = 0.0;
        for i in 0..ns {
            for j in 0..ns {
                cov_err = cov_err.max((post.covariance[(i, j)] - oracle.cov[i][j]).abs());
            }
        }
        worst = worst.max(mean_err / mean_scale).max(cov_err / cov_scale);
    }
    Ok(Outcome::at_most(
        worst,
        1e-8,
        format!("50 instances, worst normwise relative error {worst:.3e}"),
    ))
}

fn gp_noise_free(ctx: &Ctx) -> Result<Outcome> {
    let mut worst_mean: f64 = 0.0;
    let mut worst_var: f64 = 0.0;
    for inst in 0..50u64 {
        let mut rng = ctx.rng(1000 + inst);
        let m = rng.random_range(1..=10);
        let d = rng.random_range(1..=4);
        let l = 0.6;
        // Rejection-sample points at least one lengthscale apart, in a box
        // wide enough for that to terminate quickly.
        let half = l * m as f64;
        let mut x: Vec<Vec<f64>> = Vec::new();
        while x.len() < m {
            let c: Vec<f64> = (0..d).map(|_| rng.random_range(-half..half)).collect();
            let far = x.iter().all(|p| {
                p.iter()
                    .zip(&c)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
                    >= l
            });
            if far {
                x.push(c);
            }
        }
        let y: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let p = KernelParams {
            lengthscale: l,
            ..KernelParams::default()
        };
        let xm = to_matrix(&x)?;
        let post = gp_regression_posterior(&LabeledFeatures::new(xm.clone(), y.clone())?, &xm, &p)?;
        let bump = ctx.bump(Family::Gp);
        for i in 0..m {
            worst_mean = worst_mean.max((post.mean[i] + bump - y[i]).abs());
            worst_var = worst_var.max(post.covariance[(i, i)].abs());
        }
    }
    let passed = worst_mean <= 1e-6 && worst_var <= 1e-9;
    Ok(Outcome {
        measured: worst_var,
        threshold: 1e-9,
        passed,
        detail: format!(
            "50 instances, worst |mean − target| {worst_mean:.3e} (limit 1e-6), worst variance {worst_var:.3e}"
        ),
    })
}

// ---------------------------------------------------------------- Laplace

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0) == (f(hi) > 0.0) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

fn laplace_scalar(ctx: &Ctx) -> Result<Outcome> {
    // Mode of K=[1], t=[1] solves a = 1 − σ(a).
    let root = bisect(|a| a - 1.0 + 1.0 / (1.0 + (-a).exp()), 0.0, 1.0);
    let k = Matrix::from_row_major(1, 1, vec![1.0])?;
    let state = laplace_mode(&k, &[1.0], &LaplaceOptions::default())?;
    let got = state.mode[0] + ctx.bump(Family::Laplace);
    let err = (got - root).abs().max((got - 0.4012).abs());
    Ok(Outcome::at_most(
        err,
        1e-3,
        format!("mode {got:.10}, bisection root {root:.10}"),
    ))
}

fn laplace_random(ctx: &Ctx) -> Result<Outcome> {
    let mut worst_res: f64 = 0.0;
    let mut worst_drop: f64 = 0.0;
    for inst in 0..50u64 {
        let mut rng = ctx.rng(2000 + inst);
        let m = rng.random_range(1..=20);
        let d = rng.random_range(1..=3);
        let x = random_points(&mut rng, m, d, 2.0);
        let l = rng.random_range(0.3..2.0);
        let sv = rng.random_range(0.5..5.0);
        let mu = rng.random_range(-0.5..0.5);
        let t: Vec<f64> = (0..m)
            .map(|_| f64::from(rng.random_range(0..2u8)))
            .collect();
        let ka: Vec<Vec<f64>> = (0..m)
            .map(|i| {
                (0..m)
                    .map(|j| rbf(&x[i], &x[j], l, sv) + if i == j { 1e-6 } else { 0.0 })
                    .collect()
            })
            .collect();
        let opts = LaplaceOptions {
            prior_mean: mu,
            ..LaplaceOptions::default()
        };
        let state = laplace_mode(&to_matrix(&ka)?, &t, &opts)?;
        let a: Vec<f64> = state
            .mode
            .iter()
            .map(|v| v + ctx.bump(Family::Laplace))
            .collect();
        for i in 0..m {
            let kg: f64 = (0..m).map(|j| ka[i][j] * (t[j] - sigmoid(a[j]))).sum();
            worst_res = worst_res.max((a[i] - mu - kg).abs());
        }
        for w in state.objective_trace.windows(2) {
            let allowed = 1e-10 * (1.0 + w[0].abs());
            worst_drop = worst_drop.max((w[0] - w[1] - allowed).max(0.0));
        }
    }
    Ok(Outcome {
        measured: worst_res,
        threshold: 1e-6,
        passed: worst_res <= 1e-6 && worst_drop == 0.0,
        detail: format!(
            "50 instances, worst residual {worst_res:.3e}, worst objective decrease beyond roundoff {worst_drop:.3e}"
        ),
    })
}

// ---------------------------------------------------------------- probit

/// `∫σ(a)N(a|μ,v)da` by the trapezoid rule on `nodes` points over μ ± 12√v.
pub fn logistic_gaussian_quadrature(mu: f64, var: f64, nodes: usize) -> f64 {
    if var == 0.0 {
        return sigmoid(mu);
    }
    let sd = var.sqrt();
    let (lo, hi) = (mu - 12.0 * sd, mu + 12.0 * sd);
    let h = (hi - lo) / (nodes - 1) as f64;
    let norm = 1.0 / (sd * (2.0 * std::f64::consts::PI).sqrt());
    let f = |a: f64| sigmoid(a) * norm * (-0.5 * ((a - mu) / sd).powi(2)).exp();
    let inner: f64 = (1..nodes - 1).map(|i| f(lo + i as f64 * h)).sum();
    h * (inner + 0.5 * (f(lo) + f(hi)))
}

fn probit_grid(ctx: &Ctx) -> Result<Outcome> {
    let mut worst = (0.0f64, 0.0, 0.0);
    for i in 0..=20 {
        let mu = -5.0 + 0.5 * i as f64;
        for j in 0..=20 {
            let var = 0.5 * j as f64;
            let approx = probit_predictive(mu, var)? + ctx.bump(Family::Probit);
            let err = (approx - logistic_gaussian_quadrature(mu, var, 100_000)).abs();
            if err > worst.0 {
                worst = (err, mu, var);
            }
        }
    }
    Ok(Outcome::at_most(
        worst.0,
        0.01,
        format!(
            "worst |σ(κμ) − quadrature| {:.5} at mean {}, variance {}",
            worst.0, worst.1, worst.2
        ),
    ))
}

// ---------------------------------------------------------------- CNN

/// Architecture used by the gradient check.
pub fn gradient_check_config() -> NetworkConfig {
    NetworkConfig {
        in_channels: 3,
        stem_channels: 4,
        growth_rate: 2,
        block_sizes: vec![1, 1],
        compression: 0.5,
        input_size: 8,
        use_batchnorm: true,
    }
}

/// Worst relative error `|g − fd| / max(|g|, |fd|, floor)` over all
/// trainable parameters, for `L = Σ c ⊙ features`.
pub fn network_gradient_error(
    cfg: &NetworkConfig,
    mode: Mode,
    seed: u64,
    h: f64,
    floor: f64,
    bump: f64,
) -> Result<(f64, usize)> {
    let mut rng = stream_rng(seed, stream::VERIFY, 3000);
    let mut params = NetworkParams::<f64>::init(cfg, seed)?;
    for t in params.trainable_mut() {
        for v in t.iter_mut() {
            *v += rng.random_range(-0.2..0.2);
        }
    }
    let batch = 3;
    let s = cfg.input_size;
    let x = Tensor4::from_vec(
        batch,
        cfg.in_channels,
        s,
        s,
        (0..batch * cfg.in_channels * s * s)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )?;
    let d = cfg.feature_dim();
    let c = Matrix::from_fn(batch, d, |_, _| rng.random_range(-1.0..1.0));
    let loss = |p: &NetworkParams<f64>| -> Result<f64> {
        let (f, _) = p.forward(&x, mode)?;
        Ok(f.as_slice()
            .iter()
            .zip(c.as_slice())
            .map(|(a, b)| a * b)
            .sum())
    };
    let (_, tape) = params.forward(&x, mode)?;
    let grads = params.backward(&tape, &c)?;
    let analytic: Vec<Vec<f64>> = grads.trainable().iter().map(|g| g.to_vec()).collect();

    let mut worst: f64 = 0.0;
    let mut count = 0;
    for (ti, g) in analytic.iter().enumerate() {
        for k in 0..g.len() {
            let mut plus = params.clone();
            plus.trainable_mut()[ti][k] += h;
            let mut minus = params.clone();
            minus.trainable_mut()[ti][k] -= h;
            let fd = (loss(&plus)? - loss(&minus)?) / (2.0 * h);
            let a = g[k] + bump;
            worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(floor));
            count += 1;
        }
    }
    Ok((worst, count))
}

fn cnn_gradient_check(ctx: &Ctx) -> Result<Outcome> {
    let cfg = gradient_check_config();
    let bump = ctx.bump(Family::Cnn);
    let (train, n) = network_gradient_error(&cfg, Mode::Train, ctx.seed, 1e-5, 1e-6, bump)?;
    let (eval, _) = network_gradient_error(&cfg, Mode::Eval, ctx.seed, 1e-5, 1e-6, bump)?;
    let worst = train.max(eval);
    Ok(Outcome::at_most(
        worst,
        1e-3,
        format!(
            "{n} parameters, worst relative error {train:.3e} (batch statistics), {eval:.3e} (running statistics)"
        ),
    ))
}

/// Input channels of every dense layer from the concatenation rule alone.
fn closed_form_channels(cfg: &NetworkConfig) -> (Vec<Vec<usize>>, usize) {
    let mut c0 = cfg.stem_channels;
    let mut blocks = Vec::new();
    for (b, &n) in cfg.block_sizes.iter().enumerate() {
        blocks.push((0..n).map(|i| c0 + i * cfg.growth_rate).collect());
        let out = c0 + n * cfg.growth_rate;
        c0 = if b + 1 < cfg.block_sizes.len() {
            ((out as f64 * cfg.compression + 1e-9).floor() as usize).max(1)
        } else {
            out
        };
    }
    (blocks, c0)
}

fn cnn_dense_channels(ctx: &Ctx) -> Result<Outcome> {
    let mut mismatches = 0usize;
    let mut first = String::new();
    for inst in 0..100u64 {
        let mut rng = ctx.rng(4000 + inst);
        let nblocks = rng.random_range(1..=4);
        let cfg = NetworkConfig {
            in_channels: rng.random_range(1..=3),
            stem_channels: rng.random_range(1..=8),
            growth_rate: rng.random_range(1..=6),
            block_sizes: (0..nblocks).map(|_| rng.random_range(1..=3)).collect(),
            compression: [0.25, 0.5, 0.75, 1.0, rng.random_range(0.05..1.0)]
                [rng.random_range(0..5)],
            input_size: rng.random_range(4..=16),
            use_batchnorm: rng.random_bool(0.5),
        };
        let params = NetworkParams::<f64>::init(&cfg, inst)?;
        let s = cfg.input_size;
        let x = Tensor4::from_vec(1, cfg.in_channels, s, s, vec![0.5; cfg.in_channels * s * s])?;
        let (f, tape) = params.forward(&x, Mode::Eval)?;
        let (want, dim) = closed_form_channels(&cfg);
        let mut got = tape.dense_input_channels();
        if ctx.perturb == Some(Family::Cnn) {
            got[0][0] += 1;
        }
        if got != want || f.cols() != dim {
            mismatches += 1;
            if first.is_empty() {
                first = format!(
                    "; first mismatch {}: realized {got:?}/{} vs {want:?}/{dim}",
                    cfg.describe(),
                    f.cols()
                );
            }
        }
    }
    Ok(Outcome::at_most(
        mismatches as f64,
        0.0,
        format!("100 configurations, {mismatches} mismatches{first}"),
    ))
}

// ---------------------------------------------------------------- features

fn random_gray(rng: &mut Rng, h: usize, w: usize) -> ImageTensor<f64> {
    ImageTensor::from_fn(h, w, 1, |_, _, _| rng.random::<f64>())
}

/// Bilinear LBP code by direct evaluation of the sampling circle.
fn brute_lbp_code(img: &ImageTensor<f64>, y: usize, x: usize, p: usize, r: f64) -> u32 {
    let center = img.get(y, x, 0);
    let mut code = 0;
    for k in 0..p {
        let theta = 2.0 * std::f64::consts::PI * k as f64 / p as f64;
        let snap = |v: f64| {
            if (v - v.round()).abs() < 1e-9 {
                v.round()
            } else {
                v
            }
        };
        let sy = y as f64 + snap(-r * theta.sin());
        let sx = x as f64 + snap(r * theta.cos());
        let (y0, x0) = (sy.floor(), sx.floor());
        let (fy, fx) = (sy - y0, sx - x0);
        let (y0, x0) = (y0 as usize, x0 as usize);
        let px = |yy: usize, xx: usize| img.get(yy, xx, 0);
        let row = |yy: usize| {
            if fx > 0.0 {
                px(yy, x0) + (px(yy, x0 + 1) - px(yy, x0)) * fx
            } else {
                px(yy, x0)
            }
        };
        let v = if fy > 0.0 {
            row(y0) + (row(y0 + 1) - row(y0)) * fy
        } else {
            row(y0)
        };
        if v >= center {
            code |= 1 << k;
        }
    }
    code
}

/// Rotation-invariant uniform bin from an explicit walk around the circle.
fn brute_uniform_bin(code: u32, p: usize) -> usize {
    let bit = |k: usize| (code >> (k % p)) & 1;
    let transitions = (0..p).filter(|&k| bit(k) != bit(k + 1)).count();
    if transitions <= 2 {
        (0..p).filter(|&k| bit(k) == 1).count()
    } else {
        p + 1
    }
}

fn lbp_bruteforce(ctx: &Ctx) -> Result<Outcome> {
    let mut mismatches = 0usize;
    for inst in 0..20u64 {
        let mut rng = ctx.rng(5000 + inst);
        let img = random_gray(&mut rng, 16, 16);
        for (p, r) in [(8usize, 1.0f64), (16, 2.0), (24, 3.0)] {
            let m = r.ceil() as usize;
            let mut codes = lbp_codes(&img, p, r)?;
            if ctx.perturb == Some(Family::Features) {
                codes[0] ^= 1;
            }
            let mut counts = vec![0u64; p + 2];
            let mut idx = 0;
            for y in m..16 - m {
                for x in m..16 - m {
                    let want = brute_lbp_code(&img, y, x, p, r);
                    mismatches += usize::from(codes[idx] != want);
                    counts[brute_uniform_bin(want, p)] += 1;
                    idx += 1;
                }
            }
            let hist = uniform_lbp_histogram(&img, p, r)?;
            let total = idx as f64;
            for (h, &c) in hist.values.iter().zip(&counts) {
                mismatches += usize::from((h * total).round() as u64 != c);
            }
        }
    }
    Ok(Outcome::at_most(
        mismatches as f64,
        0.0,
        format!("20 images at (8,1), (16,2), (24,3): {mismatches} code or bin mismatches"),
    ))
}

fn glcm_bruteforce(ctx: &Ctx) -> Result<Outcome> {
    let mut mismatches = 0usize;
    for inst in 0..20u64 {
        let mut rng = ctx.rng(6000 + inst);
        let img = random_gray(&mut rng, 16, 16);
        let levels = [4usize, 8, 16][inst as usize % 3];
        let cfg = GlcmConfig {
            levels,
            offsets: vec![(0, 1), (1, 0), (1, 1), (1, -1), (2, -3)],
            symmetric: inst % 2 == 0,
            normalized: false,
        };
        let q = quantize_gray(&img, levels)?;
        let want_q: Vec<usize> = img
            .data()
            .iter()
            .map(|&v| ((v * levels as f64) as usize).min(levels - 1))
            .collect();
        mismatches += q
            .data
            .iter()
            .zip(&want_q)
            .filter(|(a, b)| **a as usize != **b)
            .count();
        let mats = glcm::<f64>(&q, &cfg)?;
        for (&(dr, dc), mat) in cfg.offsets.iter().zip(&mats) {
            let mut counts = vec![vec![0u64; levels]; levels];
            for y1 in 0..16i64 {
                for x1 in 0..16i64 {
                    for y2 in 0..16i64 {
                        for x2 in 0..16i64 {
                            if y2 - y1 == dr as i64 && x2 - x1 == dc as i64 {
                                let i = want_q[(y1 * 16 + x1) as usize];
                                let j = want_q[(y2 * 16 + x2) as usize];
                                counts[i][j] += 1;
                                if cfg.symmetric {
                                    counts[j][i] += 1;
                                }
                            }
                        }
                    }
                }
            }
            for i in 0..levels {
                for j in 0..levels {
                    let got = mat[(i, j)] + ctx.bump(Family::Features);
                    mismatches += usize::from(got != counts[i][j] as f64);
                }
            }
        }
    }
    Ok(Outcome::at_most(
        mismatches as f64,
        0.0,
        format!("20 images, 5 offsets each: {mismatches} level or count mismatches"),
    ))
}

fn haar_roundtrip(ctx: &Ctx) -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    for inst in 0..20u64 {
        let mut rng = ctx.rng(7000 + inst);
        let x = Matrix::from_fn(16, 16, |_, _| rng.random_range(-1.0..1.0));
        let back = haar_reconstruct(&haar_decompose(&x, 3)?)?;
        for (a, b) in back.as_slice().iter().zip(x.as_slice()) {
            worst = worst.max((a + ctx.bump(Family::Features) - b).abs());
        }
    }
    Ok(Outcome::at_most(
        worst,
        1e-10,
        format!("20 random 16x16 inputs, 3 levels, worst error {worst:.3e}"),
    ))
}

fn msws_shape(ctx: &Ctx) -> Result<Outcome> {
    let mut rng = ctx.rng(8000);
    let img = ImageTensor::from_fn(32, 32, 3, |_, _, _| rng.random::<f64>());
    let len = msws_features(&img, &WaveletConfig::default())?.len();
    let flat = ImageTensor::filled(32, 32, 3, 0.42);
    let largest = msws_features(&flat, &WaveletConfig::default())?
        .values
        .iter()
        .fold(0.0f64, |m, v| m.max((v + ctx.bump(Family::Features)).abs()));
    let passed = len == 54 && largest == 0.0;
    Ok(Outcome {
        measured: largest,
        threshold: 0.0,
        passed,
        detail: format!(
            "length {len} (expected 54), largest value on a constant image {largest:e}"
        ),
    })
}

// ---------------------------------------------------------------- Adam

fn adam_recurrence(ctx: &Ctx) -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    for wd in [0.0, 0.001] {
        let hyper = AdamHyper {
            learning_rate: 0.001,
            weight_decay: wd,
            ..AdamHyper::default()
        };
        let mut x = [1.0f64];
        let mut state = AdamState::new([1], hyper);
        let (mut ox, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for step in 1..=100 {
            let g = [x[0]];
            adam_step(&mut [&mut x[..]], &[&g[..]], &mut state)?;
            let og = ox;
            ox -= hyper.learning_rate * wd * ox;
            m = hyper.beta1 * m + (1.0 - hyper.beta1) * og;
            v = hyper.beta2 * v + (1.0 - hyper.beta2) * og * og;
            let mh = m / (1.0 - hyper.beta1.powi(step));
            let vh = v / (1.0 - hyper.beta2.powi(step));
            ox -= hyper.learning_rate * mh / (vh.sqrt() + hyper.epsilon);
            worst = worst.max((x[0] + ctx.bump(Family::Adam) - ox).abs());
        }
    }
    Ok(Outcome::at_most(
        worst,
        1e-12,
        format!("100 steps on x²/2 from 1, with and without decay: worst deviation {worst:.3e}"),
    ))
}
