use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Decoupled: applied to the parameters directly, scaled by the
    /// learning rate.
    pub weight_decay: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.001,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub first_moment: Vec<Vec<T>>,
    pub second_moment: Vec<Vec<T>>,
    pub hyper: AdamHyper,
}

impl<T: Scalar> AdamState<T> {
    /// Zero moments for tensors of the given lengths.
    pub fn new(lengths: impl IntoIterator<Item = usize>, hyper: AdamHyper) -> Self {
        let first_moment: Vec<Vec<T>> = lengths.into_iter().map(|n| vec![T::zero(); n]).collect();
        AdamState {
            step: 0,
            second_moment: first_moment.clone(),
            first_moment,
            hyper,
        }
    }

    pub fn for_tensors(tensors: &[&[T]], hyper: AdamHyper) -> Self {
        Self::new(tensors.iter().map(|t| t.len()), hyper)
    }
}

/// One optimizer step: `p −= lr·wd·p`, then the bias-corrected Adam update.
pub fn adam_step<T: Scalar>(
    params: &mut [&mut [T]],
    grads: &[&[T]],
    state: &mut AdamState<T>,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(Error::Shape(format!(
            "{} parameter tensors, {} gradients, {} moment tensors",
            params.len(),
            grads.len(),
            state.first_moment.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.first_moment[i].len() {
            return Err(Error::Shape(format!(
                "tensor {i}: {} parameters, {} gradients, {} moments",
                p.len(),
                g.len(),
                state.first_moment[i].len()
            )));
        }
    }
    state.step += 1;
    let h = state.hyper;
    let t = state.step.min(i32::MAX as u64) as i32;
    let bc1 = T::c(1.0 - h.beta1.powi(t));
    let bc2 = T::c(1.0 - h.beta2.powi(t));
    let (lr, b1, b2, eps) = (
        T::c(h.learning_rate),
        T::c(h.beta1),
        T::c(h.beta2),
        T::c(h.epsilon),
    );
    let decay = T::c(h.learning_rate * h.weight_decay);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = &mut state.first_moment[i];
        let v = &mut state.second_moment[i];
        for j in 0..p.len() {
            p[j] -= decay * p[j];
            m[j] = b1 * m[j] + (T::one() - b1) * g[j];
            v[j] = b2 * v[j] + (T::one() - b2) * g[j] * g[j];
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            p[j] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn no_decay() -> AdamHyper {
        AdamHyper {
            weight_decay: 0.0,
            ..AdamHyper::default()
        }
    }

    #[test]
    fn first_step_is_normalized_gradient() {
        for g in [0.3, -2.0, 1e-3] {
            let mut x = [1.0f64];
            let mut st = AdamState::new([1], no_decay());
            adam_step(&mut [&mut x[..]], &[&[g][..]], &mut st).unwrap();
            let want = 1.0 - 0.001 * g / (g.abs() + 1e-8);
            assert!((x[0] - want).abs() < 1e-15);
            assert_eq!(st.step, 1);
        }
    }

    #[test]
    fn zero_gradient_without_decay_is_identity() {
        let mut x = [0.7f64, -0.2];
        let mut st = AdamState::new([2], no_decay());
        adam_step(&mut [&mut x[..]], &[&[0.0, 0.0][..]], &mut st).unwrap();
        assert_eq!(x, [0.7, -0.2]);
    }

    #[test]
    fn decay_is_applied_before_the_moment_update() {
        let mut x = [2.0f64];
        let mut st = AdamState::new([1], AdamHyper::default());
        adam_step(&mut [&mut x[..]], &[&[0.0][..]], &mut st).unwrap();
        assert!((x[0] - 2.0 * (1.0 - 1e-6)).abs() < 1e-15);
    }

    #[test]
    fn quadratic_trajectory_matches_scalar_recurrence() {
        let (lr, b1, b2, eps) = (0.001f64, 0.9f64, 0.999f64, 1e-8f64);
        let (mut xo, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        let mut x = [1.0f64];
        let mut st = AdamState::new([1], no_decay());
        for t in 1..=100 {
            let g = x[0];
            adam_step(&mut [&mut x[..]], &[&[g][..]], &mut st).unwrap();
            let go = xo;
            m = b1 * m + (1.0 - b1) * go;
            v = b2 * v + (1.0 - b2) * go * go;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            xo -= lr * mh / (vh.sqrt() + eps);
            assert!((x[0] - xo).abs() <= 1e-12, "step {t}");
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut x = [1.0f64, 2.0];
        let mut st = AdamState::new([2], no_decay());
        assert!(adam_step(&mut [&mut x[..]], &[&[1.0][..]], &mut st).is_err());
        assert_eq!(st.step, 0);
    }

    proptest! {
        #[test]
        fn zero_learning_rate_is_identity(
            xs in prop::collection::vec(-10.0f64..10.0, 1..20),
            gs in prop::collection::vec(-10.0f64..10.0, 20),
            steps in 1usize..5,
        ) {
            let n = xs.len();
            let mut x = xs.clone();
            let mut st = AdamState::new([n], AdamHyper { learning_rate: 0.0, ..AdamHyper::default() });
            for _ in 0..steps {
                adam_step(&mut [&mut x[..]], &[&gs[..n]], &mut st).unwrap();
            }
            prop_assert_eq!(x, xs);
        }
    }
}
