use rand::seq::SliceRandom;
use rand::Rng as _;

use super::joint::{DenseNetBackbone, FeatureBackbone};
use super::split::Split;
use super::{accuracy, EpochRecord, Metrics, TrainConfig};
use crate::cnn::{adam_step, AdamHyper, AdamState};
use crate::error::Result;
use crate::linalg::{dot, Matrix};
use crate::rng::{stream, stream_rng};
use crate::scalar::{sigmoid, softplus, Scalar};

/// Two-class softmax head, parameterized by the logit difference.
struct Head<T> {
    w: Vec<T>,
    b: Vec<T>,
    adam: AdamState<T>,
}

impl<T: Scalar> Head<T> {
    fn logits(&self, f: &Matrix<T>) -> Vec<T> {
        (0..f.rows())
            .map(|i| dot(f.row(i), &self.w) + self.b[0])
            .collect()
    }

    fn probabilities(&self, f: &Matrix<T>) -> Vec<T> {
        self.logits(f).into_iter().map(sigmoid).collect()
    }
}

/// The same network trained end to end through a softmax head with
/// cross-entropy instead of the GP evidence. A reference point for the
/// joint model; no GP is involved.
pub fn train_softmax_control<T: Scalar>(
    split: &Split<'_, T>,
    cfg: &TrainConfig,
) -> Result<Metrics> {
    let mut backbone = DenseNetBackbone::new(split, cfg)?;
    let d = backbone.params().feature_dim();
    let mut rng = stream_rng(cfg.seed, stream::CONTROL_HEAD, 0);
    let bound = (1.0 / d as f64).sqrt();
    let w: Vec<T> = (0..d)
        .map(|_| T::c(rng.random_range(-bound..bound)))
        .collect();
    let hyper = AdamHyper {
        learning_rate: cfg.learning_rate,
        weight_decay: cfg.weight_decay,
        ..AdamHyper::default()
    };
    let mut head = Head {
        w,
        b: vec![T::zero()],
        adam: AdamState::new([d, 1], hyper),
    };
    let train_t = split.train.targets();
    let test_t = split.test.targets();
    let n = train_t.len();
    let batch = cfg.batch_size.clamp(1, n.max(1));

    let mut records = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream_rng(cfg.seed, stream::SHUFFLE, epoch as u64));
        let mut loss_sum = 0.0;
        for rows in order.chunks(batch) {
            let (f, tape) = backbone.train_forward(rows, epoch)?;
            let z = head.logits(&f);
            let m = T::from_count(rows.len());
            let mut g = Vec::with_capacity(rows.len());
            for (&zi, &r) in z.iter().zip(rows) {
                let t = train_t[r];
                loss_sum += (softplus(zi) - t * zi).as_f64();
                g.push((sigmoid(zi) - t) / m);
            }
            let dfeat = Matrix::from_fn(rows.len(), d, |i, j| g[i] * head.w[j]);
            let dw: Vec<T> = (0..d)
                .map(|j| (0..rows.len()).map(|i| g[i] * f[(i, j)]).sum())
                .collect();
            let db = vec![g.iter().copied().sum::<T>()];
            backbone.step(&tape, &dfeat)?;
            let Head { w, b, adam } = &mut head;
            adam_step(&mut [&mut w[..], &mut b[..]], &[&dw, &db], adam)?;
        }
        let train_acc = accuracy(&head.probabilities(&backbone.eval_train()?), &train_t)?;
        let test_acc = accuracy(&head.probabilities(&backbone.eval_test()?), &test_t)?;
        records.push(EpochRecord {
            epoch: epoch + 1,
            loss: Some(loss_sum / n as f64),
            train_acc,
            test_acc,
        });
    }
    let train_accuracy = accuracy(&head.probabilities(&backbone.eval_train()?), &train_t)?;
    let test_accuracy = accuracy(&head.probabilities(&backbone.eval_test()?), &test_t)?;
    Ok(Metrics {
        model: "softmax-control".into(),
        seed: cfg.seed,
        config_digest: cfg.digest(),
        train_accuracy,
        test_accuracy,
        epochs: records,
        skipped_batches: 0,
        last_batch_train_accuracy: None,
        wall_time_s: None,
    })
}
