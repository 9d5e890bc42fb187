use super::{check_binary, GpPrediction};
use crate::error::{Error, Result};
use crate::linalg::{Cholesky, Matrix};
use crate::scalar::{sigmoid, softplus, Scalar};

const MAX_HALVINGS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplaceOptions {
    /// Stop once an accepted step moves no coordinate by more than this.
    /// Raised to the precision's roundoff level when smaller.
    pub tol: f64,
    pub max_iter: usize,
    /// Constant prior mean of the latent function.
    pub prior_mean: f64,
}

impl Default for LaplaceOptions {
    fn default() -> Self {
        LaplaceOptions {
            tol: 1e-8,
            max_iter: 100,
            prior_mean: 0.0,
        }
    }
}

/// Converged Laplace approximation of the latent posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplaceState<T> {
    pub mode: Vec<T>,
    pub sigmoid_at_mode: Vec<T>,
    /// Diagonal of `W = σ(â)(1 − σ(â))`.
    pub w: Vec<T>,
    /// `K_a⁻¹(â − μ)` carried by the Newton iteration.
    pub alpha: Vec<T>,
    pub iterations: usize,
    /// `‖â − μ − K_a(t − σ(â))‖∞`.
    pub final_residual: T,
    /// Effective step tolerance after the roundoff floor.
    pub tolerance: T,
    /// Largest accepted residual: `10·tol·max(1, ‖â − μ‖∞)`.
    pub residual_bound: T,
    pub prior_mean: T,
    /// Objective after each accepted step, starting at the initial point.
    pub objective_trace: Vec<T>,
    /// Cholesky factor of `B = I + W^½ K_a W^½` at the mode.
    b_factor: Cholesky<T>,
}

impl<T: Scalar> LaplaceState<T> {
    pub fn is_converged(&self) -> bool {
        self.final_residual <= self.residual_bound
    }

    fn require_converged(&self) -> Result<()> {
        if self.is_converged() {
            Ok(())
        } else {
            Err(Error::NonConvergence {
                iterations: self.iterations,
                residual: self.final_residual.as_f64(),
            })
        }
    }

    /// `log det(I + W^½ K_a W^½)`.
    pub fn log_det_b(&self) -> T {
        self.b_factor.log_det()
    }

    pub fn len(&self) -> usize {
        self.mode.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mode.is_empty()
    }
}

fn objective<T: Scalar>(a: &[T], alpha: &[T], t: &[T], mu: T) -> (T, T) {
    let mut psi = T::zero();
    let mut scale = T::zero();
    for i in 0..a.len() {
        let lik = t[i] * a[i] - softplus(a[i]);
        let prior = T::c(0.5) * alpha[i] * (a[i] - mu);
        psi += lik - prior;
        scale += lik.abs() + prior.abs();
    }
    (psi, scale)
}

fn w_of<T: Scalar>(s: T) -> T {
    (s * (T::one() - s)).max(T::min_positive_value())
}

fn factor_b<T: Scalar>(k: &Matrix<T>, sw: &[T]) -> Result<Cholesky<T>> {
    let n = sw.len();
    let b = Matrix::from_fn(n, n, |i, j| {
        let v = sw[i] * k[(i, j)] * sw[j];
        if i == j {
            v + T::one()
        } else {
            v
        }
    });
    Cholesky::factor_with_jitter(&b, T::one())
}

/// Residual acceptance threshold. Relative to the size of the mode, since
/// the residual carries roundoff proportional to `‖K_a‖‖t − σ‖`.
fn residual_bound<T: Scalar>(a: &[T], mu: T, tol: T) -> T {
    let size = a.iter().fold(T::one(), |m, &v| m.max((v - mu).abs()));
    T::c(10.0) * tol * size
}

fn residual<T: Scalar>(k: &Matrix<T>, a: &[T], t: &[T], mu: T) -> T {
    let g: Vec<T> = a.iter().zip(t).map(|(&a, &t)| t - sigmoid(a)).collect();
    let kg = k.matvec(&g);
    a.iter()
        .zip(kg)
        .fold(T::zero(), |m, (&a, kg)| m.max((a - mu - kg).abs()))
}

/// Newton search for the mode of `p(a | t)` under the prior `N(μ, K_a)`,
/// starting from the prior mean, with step halving whenever a full step
/// would lower the objective `t·a − Σ log(1+eᵃ) − ½(a−μ)ᵀK_a⁻¹(a−μ)`.
pub fn laplace_mode<T: Scalar>(
    k_a: &Matrix<T>,
    t: &[T],
    opts: &LaplaceOptions,
) -> Result<LaplaceState<T>> {
    let n = t.len();
    if k_a.rows() != n || k_a.cols() != n {
        return Err(Error::Shape(format!(
            "kernel is {}x{} but there are {n} targets",
            k_a.rows(),
            k_a.cols()
        )));
    }
    check_binary(t)?;
    if !(opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(Error::InvalidArgument(
            "mode search needs tol > 0 and max_iter ≥ 1".into(),
        ));
    }
    let mu = T::c(opts.prior_mean);
    // The residual cannot be resolved below the roundoff of `K_a g`, which
    // matters for single precision.
    let row_sum = (0..n)
        .map(|i| k_a.row(i).iter().fold(T::zero(), |s, v| s + v.abs()))
        .fold(T::one(), T::max);
    let tol = T::c(opts.tol).max(T::c(16.0) * T::epsilon() * row_sum);
    let slack_eps = T::epsilon() * T::c(64.0);

    let mut a = vec![mu; n];
    let mut alpha = vec![T::zero(); n];
    let (mut psi, _) = objective(&a, &alpha, t, mu);
    let mut trace = vec![psi];
    let mut iterations = 0;

    while iterations < opts.max_iter {
        iterations += 1;
        let sig: Vec<T> = a.iter().map(|&v| sigmoid(v)).collect();
        let sw: Vec<T> = sig.iter().map(|&s| w_of(s).sqrt()).collect();
        let b: Vec<T> = (0..n)
            .map(|i| sw[i] * sw[i] * (a[i] - mu) + (t[i] - sig[i]))
            .collect();
        let chol = factor_b(k_a, &sw)?;
        let kb = k_a.matvec(&b);
        let swkb: Vec<T> = (0..n).map(|i| sw[i] * kb[i]).collect();
        let u = chol.solve(&swkb);
        let alpha_new: Vec<T> = (0..n).map(|i| b[i] - sw[i] * u[i]).collect();
        let a_new: Vec<T> = k_a.matvec(&alpha_new).into_iter().map(|v| v + mu).collect();

        let mut step = T::one();
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let a_try: Vec<T> = (0..n).map(|i| a[i] + step * (a_new[i] - a[i])).collect();
            let al_try: Vec<T> = (0..n)
                .map(|i| alpha[i] + step * (alpha_new[i] - alpha[i]))
                .collect();
            let (psi_try, scale) = objective(&a_try, &al_try, t, mu);
            if psi_try >= psi - slack_eps * (T::one() + scale) {
                accepted = Some((a_try, al_try, psi_try));
                break;
            }
            step *= T::c(0.5);
        }
        let Some((a_try, al_try, psi_try)) = accepted else {
            break;
        };
        let delta = a_try
            .iter()
            .zip(&a)
            .fold(T::zero(), |m, (&x, &y)| m.max((x - y).abs()));
        a = a_try;
        alpha = al_try;
        psi = psi_try;
        trace.push(psi);
        if delta <= tol && residual(k_a, &a, t, mu) <= residual_bound(&a, mu, tol) {
            break;
        }
    }

    let final_residual = residual(k_a, &a, t, mu);
    let bound = residual_bound(&a, mu, tol);
    if !(final_residual <= bound) {
        return Err(Error::NonConvergence {
            iterations,
            residual: final_residual.as_f64(),
        });
    }
    let sigmoid_at_mode: Vec<T> = a.iter().map(|&v| sigmoid(v)).collect();
    let w: Vec<T> = sigmoid_at_mode.iter().map(|&s| w_of(s)).collect();
    let sw: Vec<T> = w.iter().map(|&v| v.sqrt()).collect();
    let b_factor = factor_b(k_a, &sw)?;
    Ok(LaplaceState {
        mode: a,
        sigmoid_at_mode,
        w,
        alpha,
        iterations,
        final_residual,
        tolerance: tol,
        residual_bound: bound,
        prior_mean: mu,
        objective_trace: trace,
        b_factor,
    })
}

/// Approximate log evidence
/// `Σ[tᵢâᵢ − log(1+e^âᵢ)] − ½(â−μ)ᵀK_a⁻¹(â−μ) − ½ log det(I + K_a W)`.
pub fn laplace_log_marginal<T: Scalar>(state: &LaplaceState<T>, t: &[T]) -> Result<T> {
    state.require_converged()?;
    if t.len() != state.len() {
        return Err(Error::Shape(
            "target count differs from the fitted mode".into(),
        ));
    }
    let (psi, _) = objective(&state.mode, &state.alpha, t, state.prior_mean);
    Ok(psi - T::c(0.5) * state.log_det_b())
}

/// `∂ log evidence / ∂K_a` with the mode held fixed:
/// `½ααᵀ − ½ W^½ B⁻¹ W^½`.
pub fn evidence_gradient_k<T: Scalar>(state: &LaplaceState<T>) -> Result<Matrix<T>> {
    state.require_converged()?;
    let n = state.len();
    let b_inv = state.b_factor.inverse();
    let sw: Vec<T> = state.w.iter().map(|&v| v.sqrt()).collect();
    let half = T::c(0.5);
    Ok(Matrix::from_fn(n, n, |i, j| {
        half * (state.alpha[i] * state.alpha[j] - sw[i] * b_inv[(i, j)] * sw[j])
    }))
}

/// `σ(κ(v)·m)` with `κ(v) = (1 + πv/8)^{-½}`.
pub fn probit_predictive<T: Scalar>(latent_mean: T, latent_variance: T) -> Result<T> {
    if !(latent_variance >= T::zero()) {
        return Err(Error::InvalidArgument(format!(
            "latent variance must be nonnegative, got {latent_variance}"
        )));
    }
    let kappa = (T::one() + T::c(std::f64::consts::PI) * latent_variance / T::c(8.0))
        .sqrt()
        .recip();
    Ok(sigmoid(kappa * latent_mean))
}

/// Everything needed to predict from a converged state: `t − σ(â)` and the
/// Cholesky factor of `W⁻¹ + K_a`.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacePredictor<T> {
    pub prior_mean: T,
    pub gradient: Vec<T>,
    pub factor: Cholesky<T>,
}

impl<T: Scalar> LaplacePredictor<T> {
    pub fn new(state: &LaplaceState<T>, k_a: &Matrix<T>, t: &[T]) -> Result<Self> {
        state.require_converged()?;
        let n = state.len();
        if k_a.rows() != n || t.len() != n {
            return Err(Error::Shape(
                "kernel, targets and mode disagree in size".into(),
            ));
        }
        let mut c = k_a.clone();
        for i in 0..n {
            c[(i, i)] += state.w[i].recip();
        }
        let scale = if n == 0 {
            T::one()
        } else {
            (0..n).map(|i| k_a[(i, i)]).sum::<T>() / T::from_count(n)
        };
        let factor = Cholesky::factor_with_jitter(&c, scale.max(T::epsilon()))?;
        Ok(Self::from_parts(state.prior_mean, &state.mode, t, factor))
    }

    /// Rebuild from a stored mode and factor.
    pub fn from_parts(prior_mean: T, mode: &[T], t: &[T], factor: Cholesky<T>) -> Self {
        let gradient = mode.iter().zip(t).map(|(&a, &t)| t - sigmoid(a)).collect();
        LaplacePredictor {
            prior_mean,
            gradient,
            factor,
        }
    }

    /// Latent moments `μ + k_*ᵀ(t − σ(â))`, `k_** − k_*ᵀ(W⁻¹+K_a)⁻¹k_*` and
    /// the probit class probability.
    pub fn predict(&self, k_star: &[T], k_ss: T) -> Result<GpPrediction<T>> {
        if k_star.len() != self.gradient.len() {
            return Err(Error::Shape(format!(
                "cross-covariance has {} entries, model has {} points",
                k_star.len(),
                self.gradient.len()
            )));
        }
        let mean = self.prior_mean + crate::linalg::dot(k_star, &self.gradient);
        let v = self.factor.solve_lower(k_star);
        let mut var = k_ss - crate::linalg::dot(&v, &v);
        if var < T::zero() && var > -T::c(1e-12) * k_ss.max(T::one()) {
            var = T::zero();
        }
        let p = probit_predictive(mean, var)?;
        Ok(GpPrediction {
            latent_mean: mean,
            latent_variance: var,
            class_probability: p,
        })
    }
}

/// One-off prediction; build a [`LaplacePredictor`] to amortize the
/// factorization over many test points.
pub fn laplace_predict<T: Scalar>(
    state: &LaplaceState<T>,
    k_a: &Matrix<T>,
    t: &[T],
    k_star: &[T],
    k_ss: T,
) -> Result<GpPrediction<T>> {
    LaplacePredictor::new(state, k_a, t)?.predict(k_star, k_ss)
}
