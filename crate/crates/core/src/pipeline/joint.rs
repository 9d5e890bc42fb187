use log::{info, warn};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::model::DenseGpModel;
use super::split::Split;
use super::{accuracy, EpochRecord, Metrics, TrainConfig};
use crate::cnn::{
    adam_step, ActivationTape, AdamHyper, AdamState, Mode, NetworkParams, Tensor4, BN_MOMENTUM,
};
use crate::error::{Error, Result};
use crate::gp::{
    evidence_gradient_k, fit_kernel, gram_self, laplace_log_marginal, laplace_mode,
    rbf_feature_gradient, GpClassifier, KernelFitOptions, KernelParams, LabeledFeatures,
};
use crate::imagekit::{random_flip, ImageTensor, LabeledImage, Preprocess};
use crate::linalg::Matrix;
use crate::rng::{stream, stream_rng};
use crate::scalar::Scalar;

/// A trainable map from training samples to feature rows.
///
/// Only the training side can be differentiated; test features are produced
/// for monitoring and never feed an update.
pub trait FeatureBackbone<T: Scalar> {
    type Tape;

    /// Training-mode features for the given training-set rows.
    fn train_features(&self, rows: &[usize], epoch: usize) -> Result<(Matrix<T>, Self::Tape)>;

    /// Backpropagate `∂loss/∂features` for the batch in `tape` and take one
    /// optimizer step.
    fn apply_gradient(&mut self, tape: Self::Tape, dfeatures: &Matrix<T>) -> Result<()>;

    /// Deterministic features of every training sample, in order.
    fn eval_train(&self) -> Result<Matrix<T>>;

    /// Deterministic features of every test sample, in order.
    fn eval_test(&self) -> Result<Matrix<T>>;
}

/// Result of [`train_joint`].
#[derive(Debug, Clone)]
pub struct JointOutcome<T> {
    /// Fitted on the final full-training-set features.
    pub gp: GpClassifier<T>,
    pub epochs: Vec<EpochRecord>,
    pub skipped_batches: usize,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub last_batch_train_accuracy: Option<f64>,
}

fn with_targets<T: Scalar>(features: Matrix<T>, targets: &[T]) -> Result<LabeledFeatures<T>> {
    LabeledFeatures::new(features, targets.to_vec())
}

fn refit_kernel<T: Scalar>(
    features: &Matrix<T>,
    targets: &[T],
    current: &KernelParams,
    cfg: &TrainConfig,
) -> Result<KernelParams> {
    let data = with_targets(features.clone(), targets)?;
    let (p, evidence) = fit_kernel(
        &data,
        current,
        &cfg.laplace_options(),
        &KernelFitOptions::default(),
    )?;
    info!(
        "kernel refit: lengthscale {:.4}, signal variance {:.4}, evidence {:.4}",
        p.lengthscale,
        p.signal_variance,
        evidence.as_f64()
    );
    Ok(p)
}

fn gp_accuracy<T: Scalar>(
    gp: &GpClassifier<T>,
    features: &Matrix<T>,
    targets: &[T],
) -> Result<f64> {
    let probs: Vec<T> = gp
        .predict(features)?
        .into_iter()
        .map(|p| p.class_probability)
        .collect();
    accuracy(&probs, targets)
}

/// Joint training of a feature backbone under the Laplace GP evidence.
///
/// Each batch: training-mode features, the Laplace mode on the batch kernel,
/// loss `−log Z / M`, gradient through the kernel entries into the features
/// with the mode held fixed, one backbone step. Batches whose mode search
/// fails to converge are skipped and counted. After every epoch a GP is
/// fitted on deterministic full-training-set features to record the curves;
/// the kernel is refitted every `refit_gp_every` epochs and once more at the
/// end.
pub fn train_joint<T: Scalar, B: FeatureBackbone<T>>(
    backbone: &mut B,
    train_targets: &[T],
    test_targets: &[T],
    cfg: &TrainConfig,
) -> Result<JointOutcome<T>> {
    cfg.validate()?;
    let n = train_targets.len();
    if n == 0 || test_targets.is_empty() {
        return Err(Error::EmptySplit(
            "training and test sets must be nonempty".into(),
        ));
    }
    let batch = cfg.batch_size.min(n);
    if batch < cfg.batch_size {
        warn!(
            "batch size {} exceeds the {n} training samples; using {batch}",
            cfg.batch_size
        );
    }
    let laplace = cfg.laplace_options();
    let mut kernel = cfg.gp;
    if cfg.fit_kernel {
        kernel = refit_kernel(&backbone.eval_train()?, train_targets, &kernel, cfg)?;
    }

    let mut records = Vec::with_capacity(cfg.epochs);
    let mut skipped = 0usize;
    let mut last_rows: Vec<usize> = Vec::new();
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream_rng(cfg.seed, stream::SHUFFLE, epoch as u64));
        let (mut loss_sum, mut loss_count) = (0.0f64, 0usize);
        for rows in order.chunks(batch) {
            let (f, tape) = backbone.train_features(rows, epoch)?;
            let t: Vec<T> = rows.iter().map(|&r| train_targets[r]).collect();
            let k_rbf = gram_self(&f, &kernel)?;
            let mut k_a = k_rbf.clone();
            k_a.add_diagonal(T::c(kernel.latent_noise));
            let state = match laplace_mode(&k_a, &t, &laplace) {
                Ok(s) => s,
                Err(e @ Error::NonConvergence { .. }) => {
                    warn!("epoch {}: skipping batch: {e}", epoch + 1);
                    skipped += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let evidence = laplace_log_marginal(&state, &t)?;
            let m = rows.len();
            loss_sum -= evidence.as_f64();
            loss_count += m;
            let dk = evidence_gradient_k(&state)?;
            let dfeat = rbf_feature_gradient(&f, &k_rbf, &dk, &kernel);
            let scale = -T::one() / T::from_count(m);
            let dloss = Matrix::from_fn(dfeat.rows(), dfeat.cols(), |i, j| dfeat[(i, j)] * scale);
            backbone.apply_gradient(tape, &dloss)?;
            last_rows = rows.to_vec();
        }

        let train_f = backbone.eval_train()?;
        if cfg.fit_kernel && cfg.refit_gp_every > 0 && (epoch + 1) % cfg.refit_gp_every == 0 {
            kernel = refit_kernel(&train_f, train_targets, &kernel, cfg)?;
        }
        let gp = GpClassifier::fit(
            &with_targets(train_f.clone(), train_targets)?,
            &kernel,
            &laplace,
        )?;
        let record = EpochRecord {
            epoch: epoch + 1,
            loss: (loss_count > 0).then(|| loss_sum / loss_count as f64),
            train_acc: gp_accuracy(&gp, &train_f, train_targets)?,
            test_acc: gp_accuracy(&gp, &backbone.eval_test()?, test_targets)?,
        };
        info!(
            "epoch {}: loss {:?}, train acc {:.4}, test acc {:.4}",
            record.epoch, record.loss, record.train_acc, record.test_acc
        );
        records.push(record);
    }

    let train_f = backbone.eval_train()?;
    if cfg.fit_kernel {
        kernel = refit_kernel(&train_f, train_targets, &kernel, cfg)?;
    }
    let gp = GpClassifier::fit(
        &with_targets(train_f.clone(), train_targets)?,
        &kernel,
        &laplace,
    )?;
    let train_accuracy = gp_accuracy(&gp, &train_f, train_targets)?;
    let test_accuracy = gp_accuracy(&gp, &backbone.eval_test()?, test_targets)?;

    let last_batch_train_accuracy = if last_rows.is_empty() {
        None
    } else {
        let rows_f = Matrix::from_fn(last_rows.len(), train_f.cols(), |i, j| {
            train_f[(last_rows[i], j)]
        });
        let t: Vec<T> = last_rows.iter().map(|&r| train_targets[r]).collect();
        let batch_gp = GpClassifier::fit(&LabeledFeatures::new(rows_f, t)?, &kernel, &laplace)?;
        Some(gp_accuracy(&batch_gp, &train_f, train_targets)?)
    };

    Ok(JointOutcome {
        gp,
        epochs: records,
        skipped_batches: skipped,
        train_accuracy,
        test_accuracy,
        last_batch_train_accuracy,
    })
}

/// Images per forward pass when extracting evaluation features.
const EVAL_CHUNK: usize = 64;

/// The dense CNN as a [`FeatureBackbone`], optimized with Adam.
#[derive(Debug, Clone)]
pub struct DenseNetBackbone<T> {
    params: NetworkParams<T>,
    adam: AdamState<T>,
    preprocess: Preprocess,
    train_inputs: Vec<ImageTensor<T>>,
    test_inputs: Vec<ImageTensor<T>>,
    seed: u64,
    augment: bool,
}

fn preprocess_all<T: Scalar>(
    samples: &[&LabeledImage<T>],
    preprocess: &Preprocess,
) -> Result<Vec<ImageTensor<T>>> {
    samples
        .par_iter()
        .map(|s| preprocess.eval(&s.image))
        .collect()
}

/// Evaluation-mode features of preprocessed images, in order.
pub(crate) fn network_features<T: Scalar>(
    params: &NetworkParams<T>,
    inputs: &[ImageTensor<T>],
) -> Result<Matrix<T>> {
    let d = params.feature_dim();
    let mut data = Vec::with_capacity(inputs.len() * d);
    for chunk in inputs.chunks(EVAL_CHUNK) {
        let refs: Vec<&ImageTensor<T>> = chunk.iter().collect();
        let (f, _) = params.forward(&Tensor4::from_images(&refs)?, Mode::Eval)?;
        data.extend_from_slice(f.as_slice());
    }
    Matrix::from_row_major(inputs.len(), d, data)
}

impl<T: Scalar> DenseNetBackbone<T> {
    /// Fresh network for `cfg`; inputs are preprocessed once up front.
    pub fn new(split: &Split<'_, T>, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let params = NetworkParams::init(&cfg.network, cfg.seed)?;
        let hyper = AdamHyper {
            learning_rate: cfg.learning_rate,
            weight_decay: cfg.weight_decay,
            ..AdamHyper::default()
        };
        let adam = AdamState::for_tensors(&params.trainable(), hyper);
        let preprocess = Preprocess::for_input_size(cfg.network.input_size);
        Ok(DenseNetBackbone {
            train_inputs: preprocess_all(split.train.samples(), &preprocess)?,
            test_inputs: preprocess_all(split.test.samples(), &preprocess)?,
            params,
            adam,
            preprocess,
            seed: cfg.seed,
            augment: cfg.augment,
        })
    }

    pub fn params(&self) -> &NetworkParams<T> {
        &self.params
    }

    pub fn preprocess(&self) -> &Preprocess {
        &self.preprocess
    }

    pub fn adam(&self) -> &AdamState<T> {
        &self.adam
    }

    pub fn into_parts(self) -> (NetworkParams<T>, AdamState<T>, Preprocess) {
        (self.params, self.adam, self.preprocess)
    }

    /// Training-mode forward pass with the same batch assembly and
    /// augmentation as joint training.
    pub fn train_forward(
        &self,
        rows: &[usize],
        epoch: usize,
    ) -> Result<(Matrix<T>, ActivationTape<T>)> {
        let n = self.train_inputs.len() as u64;
        let images: Vec<ImageTensor<T>> = rows
            .iter()
            .map(|&r| {
                let img = &self.train_inputs[r];
                if self.augment {
                    let mut rng =
                        stream_rng(self.seed, stream::AUGMENT, epoch as u64 * n + r as u64);
                    random_flip(
                        img,
                        self.preprocess.flip_horizontal_p,
                        self.preprocess.flip_vertical_p,
                        &mut rng,
                    )
                } else {
                    img.clone()
                }
            })
            .collect();
        let refs: Vec<&ImageTensor<T>> = images.iter().collect();
        self.params
            .forward(&Tensor4::from_images(&refs)?, Mode::Train)
    }

    /// Backward pass from feature gradients, running-statistics update and
    /// one Adam step.
    pub fn step(&mut self, tape: &ActivationTape<T>, dfeatures: &Matrix<T>) -> Result<()> {
        let grads = self.params.backward(tape, dfeatures)?;
        self.params.update_running_stats(tape, BN_MOMENTUM)?;
        adam_step(
            &mut self.params.trainable_mut(),
            &grads.trainable(),
            &mut self.adam,
        )
    }
}

impl<T: Scalar> FeatureBackbone<T> for DenseNetBackbone<T> {
    type Tape = ActivationTape<T>;

    fn train_features(&self, rows: &[usize], epoch: usize) -> Result<(Matrix<T>, Self::Tape)> {
        self.train_forward(rows, epoch)
    }

    fn apply_gradient(&mut self, tape: Self::Tape, dfeatures: &Matrix<T>) -> Result<()> {
        self.step(&tape, dfeatures)
    }

    fn eval_train(&self) -> Result<Matrix<T>> {
        network_features(&self.params, &self.train_inputs)
    }

    fn eval_test(&self) -> Result<Matrix<T>> {
        network_features(&self.params, &self.test_inputs)
    }
}

/// A learnable linear map `X ↦ XW` over fixed input vectors, trained with
/// Adam. Stands in for the CNN when exercising the joint loop on
/// hand-built features.
#[derive(Debug, Clone)]
pub struct LinearBackbone<T> {
    train_inputs: Matrix<T>,
    test_inputs: Matrix<T>,
    weight: Matrix<T>,
    adam: AdamState<T>,
}

impl<T: Scalar> LinearBackbone<T> {
    /// Starts from `W = scale · I`.
    pub fn new(
        train_inputs: Matrix<T>,
        test_inputs: Matrix<T>,
        scale: T,
        hyper: AdamHyper,
    ) -> Result<Self> {
        let d = train_inputs.cols();
        if test_inputs.cols() != d {
            return Err(Error::Shape(format!(
                "train inputs have {d} columns, test inputs {}",
                test_inputs.cols()
            )));
        }
        let weight = Matrix::from_fn(d, d, |i, j| if i == j { scale } else { T::zero() });
        let adam = AdamState::new([d * d], hyper);
        Ok(LinearBackbone {
            train_inputs,
            test_inputs,
            weight,
            adam,
        })
    }

    pub fn weight(&self) -> &Matrix<T> {
        &self.weight
    }
}

impl<T: Scalar> FeatureBackbone<T> for LinearBackbone<T> {
    type Tape = Matrix<T>;

    fn train_features(&self, rows: &[usize], _epoch: usize) -> Result<(Matrix<T>, Matrix<T>)> {
        let d = self.train_inputs.cols();
        let x = Matrix::from_fn(rows.len(), d, |i, j| self.train_inputs[(rows[i], j)]);
        Ok((x.matmul(&self.weight), x))
    }

    fn apply_gradient(&mut self, x: Matrix<T>, dfeatures: &Matrix<T>) -> Result<()> {
        let dw = x.transpose().matmul(dfeatures);
        let mut w = self.weight.as_slice().to_vec();
        adam_step(&mut [&mut w[..]], &[dw.as_slice()], &mut self.adam)?;
        self.weight = Matrix::from_row_major(self.weight.rows(), self.weight.cols(), w)?;
        Ok(())
    }

    fn eval_train(&self) -> Result<Matrix<T>> {
        Ok(self.train_inputs.matmul(&self.weight))
    }

    fn eval_test(&self) -> Result<Matrix<T>> {
        Ok(self.test_inputs.matmul(&self.weight))
    }
}

/// Joint DenseNet-GP training on `split`. The returned model pairs the
/// trained network with the GP refitted on its final training features.
pub fn train_densenet_gp<T: Scalar>(
    split: &Split<'_, T>,
    cfg: &TrainConfig,
) -> Result<(DenseGpModel<T>, Metrics)> {
    let mut backbone = DenseNetBackbone::new(split, cfg)?;
    let outcome = train_joint(
        &mut backbone,
        &split.train.targets(),
        &split.test.targets(),
        cfg,
    )?;
    let (network, _, preprocess) = backbone.into_parts();
    let metrics = Metrics {
        model: "densenet-gp".into(),
        seed: cfg.seed,
        config_digest: cfg.digest(),
        train_accuracy: outcome.train_accuracy,
        test_accuracy: outcome.test_accuracy,
        epochs: outcome.epochs,
        skipped_batches: outcome.skipped_batches,
        last_batch_train_accuracy: outcome.last_batch_train_accuracy,
        wall_time_s: None,
    };
    Ok((
        DenseGpModel {
            preprocess,
            network,
            gp: outcome.gp,
        },
        metrics,
    ))
}
