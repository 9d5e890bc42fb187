//! The classifier pipeline against a naive reimplementation: dense inverses,
//! plain Newton on the unnormalized posterior, textbook predictive moments.

#![allow(clippy::needless_range_loop)]

use densegp::gp::{
    gp_classify, laplace_log_marginal, laplace_mode, latent_covariance, probit_predictive,
    KernelParams, LabeledFeatures, LaplaceOptions,
};
use densegp::linalg::Matrix;
use densegp::verify::logistic_gaussian_quadrature;

fn sigmoid(a: f64) -> f64 {
    1.0 / (1.0 + (-a).exp())
}

fn inverse(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut r = a[i].clone();
            r.extend((0..n).map(|j| f64::from(u8::from(i == j))));
            r
        })
        .collect();
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs()))
            .unwrap();
        m.swap(c, p);
        let d = m[c][c];
        m[c].iter_mut().for_each(|v| *v /= d);
        for r in 0..n {
            if r != c {
                let f = m[r][c];
                for k in 0..2 * n {
                    m[r][k] -= f * m[c][k];
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

fn determinant(a: &[Vec<f64>]) -> f64 {
    let n = a.len();
    let mut m = a.to_vec();
    let mut det = 1.0;
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs()))
            .unwrap();
        if p != c {
            m.swap(c, p);
            det = -det;
        }
        det *= m[c][c];
        for r in c + 1..n {
            let f = m[r][c] / m[c][c];
            for k in c..n {
                m[r][k] -= f * m[c][k];
            }
        }
    }
    det
}

fn mat_vec(a: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    a.iter()
        .map(|r| r.iter().zip(v).map(|(x, y)| x * y).sum())
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Naive {
    k: Vec<Vec<f64>>,
    mode: Vec<f64>,
    t: Vec<f64>,
    mu: f64,
}

impl Naive {
    fn fit(x: &[f64], t: &[f64], p: &KernelParams) -> Self {
        let n = x.len();
        let k: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        let r = x[i] - x[j];
                        p.signal_variance * (-0.5 * r * r / p.lengthscale.powi(2)).exp()
                            + if i == j { p.latent_noise } else { 0.0 }
                    })
                    .collect()
            })
            .collect();
        let kinv = inverse(&k);
        let mu = p.prior_mean;
        let mut a = vec![mu; n];
        for _ in 0..60 {
            let s: Vec<f64> = a.iter().map(|&v| sigmoid(v)).collect();
            let centered: Vec<f64> = a.iter().map(|v| v - mu).collect();
            let prior_pull = mat_vec(&kinv, &centered);
            let grad: Vec<f64> = (0..n).map(|i| t[i] - s[i] - prior_pull[i]).collect();
            let mut h = kinv.clone();
            for i in 0..n {
                h[i][i] += s[i] * (1.0 - s[i]);
            }
            let step = mat_vec(&inverse(&h), &grad);
            for i in 0..n {
                a[i] += step[i];
            }
        }
        Naive {
            k,
            mode: a,
            t: t.to_vec(),
            mu,
        }
    }

    fn w(&self) -> Vec<f64> {
        self.mode
            .iter()
            .map(|&a| sigmoid(a) * (1.0 - sigmoid(a)))
            .collect()
    }

    fn evidence(&self) -> f64 {
        let n = self.mode.len();
        let centered: Vec<f64> = self.mode.iter().map(|v| v - self.mu).collect();
        let fit: f64 = (0..n)
            .map(|i| self.t[i] * self.mode[i] - (1.0 + self.mode[i].exp()).ln())
            .sum();
        let quad = dot(&centered, &mat_vec(&inverse(&self.k), &centered));
        let w = self.w();
        let b: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| f64::from(u8::from(i == j)) + self.k[i][j] * w[j])
                    .collect()
            })
            .collect();
        fit - 0.5 * quad - 0.5 * determinant(&b).ln()
    }

    /// Latent mean and variance at a point with cross-covariance `ks`.
    fn moments(&self, ks: &[f64], kss: f64) -> (f64, f64) {
        let g: Vec<f64> = (0..ks.len())
            .map(|i| self.t[i] - sigmoid(self.mode[i]))
            .collect();
        let w = self.w();
        let mut c = self.k.clone();
        for i in 0..ks.len() {
            c[i][i] += 1.0 / w[i];
        }
        let mean = self.mu + dot(ks, &g);
        (mean, kss - dot(ks, &mat_vec(&inverse(&c), ks)))
    }
}

fn six_points() -> (Vec<f64>, Vec<f64>, KernelParams) {
    let x = vec![-2.0, -1.2, -0.3, 0.4, 1.1, 2.3];
    let t = vec![0.0, 0.0, 1.0, 0.0, 1.0, 1.0];
    let p = KernelParams {
        lengthscale: 0.9,
        signal_variance: 2.5,
        prior_mean: 0.15,
        ..KernelParams::default()
    };
    (x, t, p)
}

#[test]
fn six_point_classifier_matches_naive_pipeline() {
    let (x, t, p) = six_points();
    let naive = Naive::fit(&x, &t, &p);
    let tests = [-3.0, -1.6, -0.3, 0.0, 0.75, 1.7, 4.0];
    let train = LabeledFeatures::new(Matrix::from_row_major(6, 1, x.clone()).unwrap(), t).unwrap();
    let got = gp_classify(
        &train,
        &Matrix::from_row_major(7, 1, tests.to_vec()).unwrap(),
        &p,
    )
    .unwrap();
    for (xs, g) in tests.iter().zip(&got) {
        let ks: Vec<f64> = x
            .iter()
            .map(|xi| p.signal_variance * (-0.5 * (xi - xs).powi(2) / p.lengthscale.powi(2)).exp())
            .collect();
        let (mean, var) = naive.moments(&ks, p.signal_variance);
        let kappa = 1.0 / (1.0 + std::f64::consts::PI * var / 8.0).sqrt();
        let prob = sigmoid(kappa * mean);
        assert!(
            (g.latent_mean - mean).abs() < 1e-6,
            "mean at {xs}: {} vs {mean}",
            g.latent_mean
        );
        assert!((g.latent_variance - var).abs() < 1e-6, "variance at {xs}");
        assert!(
            (g.class_probability - prob).abs() < 1e-6,
            "probability at {xs}"
        );
        // The probit closed form stays within its stated tolerance of the
        // exact Gaussian-logistic integral.
        let exact = logistic_gaussian_quadrature(mean, var, 100_000);
        assert!(
            (g.class_probability - exact).abs() < 0.01,
            "quadrature at {xs}"
        );
    }
}

#[test]
fn mean_one_variance_one_agrees_with_quadrature() {
    let p = probit_predictive(1.0f64, 1.0).unwrap();
    let kappa = (1.0 + std::f64::consts::PI / 8.0).powf(-0.5);
    assert_eq!(p, sigmoid(kappa));
    assert!((p - logistic_gaussian_quadrature(1.0, 1.0, 100_000)).abs() < 0.01);
}

#[test]
fn duplicating_a_point_moves_average_evidence_by_a_bounded_amount() {
    let (x, t, p) = six_points();
    let evidence = |x: &[f64], t: &[f64]| -> (f64, f64) {
        let m = Matrix::from_row_major(x.len(), 1, x.to_vec()).unwrap();
        let k = latent_covariance(&m, &p).unwrap();
        let opts = LaplaceOptions {
            prior_mean: p.prior_mean,
            ..LaplaceOptions::default()
        };
        let state = laplace_mode(&k, t, &opts).unwrap();
        (
            laplace_log_marginal(&state, t).unwrap(),
            Naive::fit(x, t, &p).evidence(),
        )
    };
    let (lib6, naive6) = evidence(&x, &t);
    let (mut x7, mut t7) = (x.clone(), t.clone());
    x7.push(x[2]);
    t7.push(t[2]);
    let (lib7, naive7) = evidence(&x7, &t7);
    assert!((lib6 - naive6).abs() < 1e-6, "{lib6} vs {naive6}");
    assert!((lib7 - naive7).abs() < 1e-6, "{lib7} vs {naive7}");
    let shift = (lib7 / 7.0 - lib6 / 6.0).abs();
    assert!(shift < 0.25, "per-point evidence moved by {shift}");
}
