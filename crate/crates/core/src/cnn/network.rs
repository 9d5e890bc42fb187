use serde::{Deserialize, Serialize};

use super::layers::{
    avg_pool_2x2, avg_pool_backward, global_avg_pool, global_avg_pool_backward, max_pool_3x3_s2,
    max_pool_backward, relu, relu_backward, BatchNorm, Conv2d, Mode, NormCache,
};
use super::tensor::Tensor4;
use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::imagekit::ImageTensor;
use crate::linalg::Matrix;
use crate::rng::{stream, stream_rng};
use crate::scalar::Scalar;

/// Architecture of the densely-connected feature extractor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub in_channels: usize,
    pub stem_channels: usize,
    /// Channels each dense layer adds.
    pub growth_rate: usize,
    /// Dense layers per block.
    pub block_sizes: Vec<usize>,
    /// Channel multiplier of the transition layers.
    pub compression: f64,
    pub input_size: usize,
    pub use_batchnorm: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            in_channels: 3,
            stem_channels: 8,
            growth_rate: 4,
            block_sizes: vec![2, 2],
            compression: 0.5,
            input_size: 32,
            use_batchnorm: true,
        }
    }
}

impl NetworkConfig {
    /// The 121-layer ImageNet configuration.
    pub fn densenet121() -> Self {
        NetworkConfig {
            in_channels: 3,
            stem_channels: 64,
            growth_rate: 32,
            block_sizes: vec![6, 12, 24, 16],
            compression: 0.5,
            input_size: 224,
            use_batchnorm: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.block_sizes.is_empty() || self.block_sizes.contains(&0) {
            return bad(format!(
                "block sizes must be a nonempty list of positive counts, got {:?}",
                self.block_sizes
            ));
        }
        if self.growth_rate == 0 || self.stem_channels == 0 || self.in_channels == 0 {
            return bad("growth rate and channel counts must be positive".into());
        }
        if !(self.compression > 0.0 && self.compression <= 1.0) {
            return bad(format!(
                "compression must be in (0, 1], got {}",
                self.compression
            ));
        }
        if self.input_size == 0 {
            return bad("input size must be positive".into());
        }
        Ok(())
    }

    /// Width of the 1×1 bottleneck inside each dense layer.
    pub fn bottleneck_width(&self) -> usize {
        4 * self.growth_rate
    }

    /// Output channels of a transition fed `c` channels.
    pub fn transition_channels(&self, c: usize) -> usize {
        ((c as f64 * self.compression + 1e-9).floor() as usize).max(1)
    }

    /// Input channel count of every dense layer, grouped by block.
    pub fn dense_layer_input_channels(&self) -> Vec<Vec<usize>> {
        let mut c = self.stem_channels;
        let mut out = Vec::with_capacity(self.block_sizes.len());
        for (b, &layers) in self.block_sizes.iter().enumerate() {
            out.push((0..layers).map(|i| c + i * self.growth_rate).collect());
            c += layers * self.growth_rate;
            if b + 1 < self.block_sizes.len() {
                c = self.transition_channels(c);
            }
        }
        out
    }

    /// Length of the pooled feature vector.
    pub fn feature_dim(&self) -> usize {
        let mut c = self.stem_channels;
        for (b, &layers) in self.block_sizes.iter().enumerate() {
            c += layers * self.growth_rate;
            if b + 1 < self.block_sizes.len() {
                c = self.transition_channels(c);
            }
        }
        c
    }

    /// Canonical one-line description, used in error messages and digests.
    pub fn describe(&self) -> String {
        format!(
            "in={} stem={} growth={} blocks={:?} compression={} input={} batchnorm={}",
            self.in_channels,
            self.stem_channels,
            self.growth_rate,
            self.block_sizes,
            self.compression,
            self.input_size,
            self.use_batchnorm
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T> {
    pub norm1: Option<BatchNorm<T>>,
    /// 1×1 bottleneck.
    pub conv1: Conv2d<T>,
    pub norm2: Option<BatchNorm<T>>,
    /// 3×3, padding 1, `growth_rate` outputs.
    pub conv2: Conv2d<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition<T> {
    pub norm: Option<BatchNorm<T>>,
    pub conv: Conv2d<T>,
}

/// Shape and role of one stored tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSlot {
    pub shape: Vec<usize>,
    /// `false` for normalization running statistics.
    pub trainable: bool,
}

/// All tensors of the network, laid out by its [`NetworkConfig`]. The same
/// type carries gradients, where running-statistic slots stay zero.
/// Equality compares configuration and tensor values, not generations.
#[derive(Debug, Clone)]
pub struct NetworkParams<T> {
    config: NetworkConfig,
    pub stem_conv: Conv2d<T>,
    pub stem_norm: Option<BatchNorm<T>>,
    pub blocks: Vec<Vec<DenseLayer<T>>>,
    pub transitions: Vec<Transition<T>>,
    pub final_norm: Option<BatchNorm<T>>,
    generation: u64,
}

impl<T: Scalar> PartialEq for NetworkParams<T> {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self
                .tensors()
                .iter()
                .zip(other.tensors())
                .all(|((_, a), (_, b))| a == &b)
    }
}

fn conv_slots<T>(c: &Conv2d<T>) -> [TensorSlot; 2] {
    [
        TensorSlot {
            shape: vec![c.out_channels, c.in_channels, c.kernel, c.kernel],
            trainable: true,
        },
        TensorSlot {
            shape: vec![c.out_channels],
            trainable: true,
        },
    ]
}

fn norm_slots(c: usize) -> [TensorSlot; 4] {
    [true, true, false, false].map(|trainable| TensorSlot {
        shape: vec![c],
        trainable,
    })
}

impl<T: Scalar> NetworkParams<T> {
    fn build(
        config: &NetworkConfig,
        mut conv: impl FnMut(usize, usize, usize, usize, usize) -> Conv2d<T>,
        norm: impl Fn(usize) -> BatchNorm<T>,
    ) -> Result<Self> {
        config.validate()?;
        let bn = |c: usize| config.use_batchnorm.then(|| norm(c));
        let stem_conv = conv(config.in_channels, config.stem_channels, 7, 2, 3);
        let stem_norm = bn(config.stem_channels);
        let mut blocks = Vec::new();
        let mut transitions = Vec::new();
        let layout = config.dense_layer_input_channels();
        let k = config.growth_rate;
        let bw = config.bottleneck_width();
        for (b, inputs) in layout.iter().enumerate() {
            let layers = inputs
                .iter()
                .map(|&c| DenseLayer {
                    norm1: bn(c),
                    conv1: conv(c, bw, 1, 1, 0),
                    norm2: bn(bw),
                    conv2: conv(bw, k, 3, 1, 1),
                })
                .collect();
            blocks.push(layers);
            if b + 1 < layout.len() {
                let c = inputs[0] + inputs.len() * k;
                transitions.push(Transition {
                    norm: bn(c),
                    conv: conv(c, config.transition_channels(c), 1, 1, 0),
                });
            }
        }
        let final_norm = bn(config.feature_dim());
        Ok(NetworkParams {
            config: config.clone(),
            stem_conv,
            stem_norm,
            blocks,
            transitions,
            final_norm,
            generation: 0,
        })
    }

    /// Seeded initialization: fan-in-scaled uniform convolution weights,
    /// zero biases, unit scale and zero shift.
    pub fn init(config: &NetworkConfig, seed: u64) -> Result<Self> {
        let mut rng = stream_rng(seed, stream::INIT, 0);
        Self::build(
            config,
            |i, o, k, s, p| Conv2d::init(i, o, k, s, p, &mut rng),
            BatchNorm::new,
        )
    }

    /// Every weight, bias, scale and shift zero.
    pub fn zeros(config: &NetworkConfig) -> Result<Self> {
        Self::build(config, Conv2d::zeros, BatchNorm::zeros)
    }

    /// Gradient container with the same layout, all zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = Self::zeros(&self.config).expect("validated config");
        for norm in z.norms_mut() {
            norm.running_var.iter_mut().for_each(|v| *v = T::zero());
        }
        z.generation = self.generation;
        z
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim()
    }

    /// Incremented by every mutable access through this type's methods.
    pub fn generation(&self) -> u64 {
        self.generation
    }

    fn norms_mut(&mut self) -> Vec<&mut BatchNorm<T>> {
        let mut v: Vec<&mut BatchNorm<T>> = Vec::new();
        v.extend(self.stem_norm.as_mut());
        let transitions = &mut self.transitions;
        let mut titer = transitions.iter_mut();
        for block in self.blocks.iter_mut() {
            for l in block.iter_mut() {
                v.extend(l.norm1.as_mut());
                v.extend(l.norm2.as_mut());
            }
            if let Some(t) = titer.next() {
                v.extend(t.norm.as_mut());
            }
        }
        v.extend(self.final_norm.as_mut());
        v
    }

    /// Every tensor with its slot, in declaration order.
    pub fn tensors(&self) -> Vec<(TensorSlot, &[T])> {
        let mut out: Vec<(TensorSlot, &[T])> = Vec::new();
        fn push_conv<'a, T>(out: &mut Vec<(TensorSlot, &'a [T])>, c: &'a Conv2d<T>) {
            let [w, b] = conv_slots(c);
            out.push((w, &c.weight));
            out.push((b, &c.bias));
        }
        fn push_norm<'a, T>(out: &mut Vec<(TensorSlot, &'a [T])>, n: Option<&'a BatchNorm<T>>) {
            if let Some(n) = n {
                let [g, b, m, v] = norm_slots(n.gamma.len());
                out.push((g, &n.gamma));
                out.push((b, &n.beta));
                out.push((m, &n.running_mean));
                out.push((v, &n.running_var));
            }
        }
        push_conv(&mut out, &self.stem_conv);
        push_norm(&mut out, self.stem_norm.as_ref());
        for (b, block) in self.blocks.iter().enumerate() {
            for l in block {
                push_norm(&mut out, l.norm1.as_ref());
                push_conv(&mut out, &l.conv1);
                push_norm(&mut out, l.norm2.as_ref());
                push_conv(&mut out, &l.conv2);
            }
            if let Some(t) = self.transitions.get(b) {
                push_norm(&mut out, t.norm.as_ref());
                push_conv(&mut out, &t.conv);
            }
        }
        push_norm(&mut out, self.final_norm.as_ref());
        out
    }

    /// Mutable view of every tensor in declaration order; bumps the
    /// generation.
    pub fn tensors_mut(&mut self) -> Vec<(TensorSlot, &mut [T])> {
        self.generation += 1;
        let mut out: Vec<(TensorSlot, &mut [T])> = Vec::new();
        fn push_conv<'a, T>(out: &mut Vec<(TensorSlot, &'a mut [T])>, c: &'a mut Conv2d<T>) {
            let [w, b] = conv_slots(c);
            out.push((w, &mut c.weight));
            out.push((b, &mut c.bias));
        }
        fn push_norm<'a, T>(
            out: &mut Vec<(TensorSlot, &'a mut [T])>,
            n: Option<&'a mut BatchNorm<T>>,
        ) {
            if let Some(n) = n {
                let [g, b, m, v] = norm_slots(n.gamma.len());
                out.push((g, &mut n.gamma));
                out.push((b, &mut n.beta));
                out.push((m, &mut n.running_mean));
                out.push((v, &mut n.running_var));
            }
        }
        push_conv(&mut out, &mut self.stem_conv);
        push_norm(&mut out, self.stem_norm.as_mut());
        let mut titer = self.transitions.iter_mut();
        for block in self.blocks.iter_mut() {
            for l in block.iter_mut() {
                push_norm(&mut out, l.norm1.as_mut());
                push_conv(&mut out, &mut l.conv1);
                push_norm(&mut out, l.norm2.as_mut());
                push_conv(&mut out, &mut l.conv2);
            }
            if let Some(t) = titer.next() {
                push_norm(&mut out, t.norm.as_mut());
                push_conv(&mut out, &mut t.conv);
            }
        }
        push_norm(&mut out, self.final_norm.as_mut());
        out
    }

    pub fn trainable(&self) -> Vec<&[T]> {
        self.tensors()
            .into_iter()
            .filter(|(s, _)| s.trainable)
            .map(|(_, t)| t)
            .collect()
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut [T]> {
        self.tensors_mut()
            .into_iter()
            .filter(|(s, _)| s.trainable)
            .map(|(_, t)| t)
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.trainable().iter().map(|t| t.len()).sum()
    }

    /// Fold the batch statistics recorded in a training-mode tape into the
    /// running statistics.
    pub fn update_running_stats(&mut self, tape: &ActivationTape<T>, momentum: f64) -> Result<()> {
        if tape.mode != Mode::Train {
            return Err(Error::InvalidArgument(
                "running statistics need a training-mode tape".into(),
            ));
        }
        self.check_tape(tape)?;
        self.generation += 1;
        let caches = tape.norm_caches();
        let m = T::c(momentum);
        for (norm, cache) in self.norms_mut().into_iter().zip(caches) {
            norm.update_running(cache, m);
        }
        Ok(())
    }

    fn check_tape(&self, tape: &ActivationTape<T>) -> Result<()> {
        if tape.generation != self.generation {
            return Err(Error::StaleTape {
                tape: tape.generation,
                params: self.generation,
            });
        }
        Ok(())
    }

    /// Batch forward pass. Returns one feature row per sample.
    pub fn forward(&self, x: &Tensor4<T>, mode: Mode) -> Result<(Matrix<T>, ActivationTape<T>)> {
        let cfg = &self.config;
        if x.c != cfg.in_channels || x.h != cfg.input_size || x.w != cfg.input_size {
            return Err(Error::Shape(format!(
                "network expects {}x{}x{} inputs, got {}x{}x{}",
                cfg.in_channels, cfg.input_size, cfg.input_size, x.c, x.h, x.w
            )));
        }
        if x.n == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        let c = self.stem_conv.forward(x)?;
        let (r, stem_nr) = norm_relu(self.stem_norm.as_ref(), &c, mode)?;
        let (mut cur, pool_arg) = max_pool_3x3_s2(&r);
        let stem = StemTape {
            input: x.clone(),
            nr: stem_nr,
            pool_arg,
            pool_input_shape: r.shape(),
        };

        let k = cfg.growth_rate;
        let mut blocks = Vec::with_capacity(self.blocks.len());
        let mut transitions = Vec::with_capacity(self.transitions.len());
        for (b, block) in self.blocks.iter().enumerate() {
            let c_in = cur.c;
            let mut buf = Tensor4::zeros(cur.n, c_in + block.len() * k, cur.h, cur.w);
            buf.write_channels(0, &cur);
            let mut layers = Vec::with_capacity(block.len());
            for (i, layer) in block.iter().enumerate() {
                let inp = buf.narrow_channels(0, c_in + i * k);
                let (new, tape) = dense_layer_forward_tape(&inp, layer, mode)?;
                buf.write_channels(c_in + i * k, &new);
                layers.push(tape);
            }
            blocks.push(BlockTape { c_in, layers });
            cur = buf;
            if let Some(t) = self.transitions.get(b) {
                let (o, nr) = norm_relu(t.norm.as_ref(), &cur, mode)?;
                let conv_out = t.conv.forward(&o)?;
                let shape = conv_out.shape();
                cur = avg_pool_2x2(&conv_out);
                transitions.push(TransitionTape {
                    nr,
                    conv_out_shape: shape,
                });
            }
        }
        let (o, final_nr) = norm_relu(self.final_norm.as_ref(), &cur, mode)?;
        let features = global_avg_pool(&o);
        let tape = ActivationTape {
            generation: self.generation,
            mode,
            stem,
            blocks,
            transitions,
            final_nr,
            output: features.clone(),
        };
        Ok((features, tape))
    }

    /// Reverse pass for `∂loss/∂features`; returns parameter gradients in a
    /// container shaped like `self`.
    pub fn backward(&self, tape: &ActivationTape<T>, dfeatures: &Matrix<T>) -> Result<Self> {
        self.check_tape(tape)?;
        if dfeatures.rows() != tape.output.rows() || dfeatures.cols() != tape.output.cols() {
            return Err(Error::Shape(format!(
                "feature gradient is {}x{}, forward produced {}x{}",
                dfeatures.rows(),
                dfeatures.cols(),
                tape.output.rows(),
                tape.output.cols()
            )));
        }
        let mut g = self.zeros_like();
        let d_out = global_avg_pool_backward(dfeatures, tape.final_nr.out.shape());
        let mut dcur = norm_relu_backward(
            self.final_norm.as_ref(),
            &tape.final_nr,
            &d_out,
            g.final_norm.as_mut(),
        );
        for b in (0..self.blocks.len()).rev() {
            if let Some(t) = self.transitions.get(b) {
                let tt = &tape.transitions[b];
                let dconv = avg_pool_backward(&dcur, tt.conv_out_shape);
                let do_ = t
                    .conv
                    .backward(&tt.nr.out, &dconv, &mut g.transitions[b].conv, true)?
                    .expect("input gradient requested");
                dcur = norm_relu_backward(
                    t.norm.as_ref(),
                    &tt.nr,
                    &do_,
                    g.transitions[b].norm.as_mut(),
                );
            }
            let bt = &tape.blocks[b];
            let k = self.config.growth_rate;
            let mut dbuf = dcur;
            for i in (0..self.blocks[b].len()).rev() {
                let dnew = dbuf.narrow_channels(bt.c_in + i * k, k);
                let dinp = dense_layer_backward(
                    &self.blocks[b][i],
                    &bt.layers[i],
                    &dnew,
                    &mut g.blocks[b][i],
                )?;
                dbuf.add_channels(0, &dinp);
            }
            dcur = dbuf.narrow_channels(0, bt.c_in);
        }
        let st = &tape.stem;
        let dr = max_pool_backward(&dcur, &st.pool_arg, st.pool_input_shape);
        let dc = norm_relu_backward(self.stem_norm.as_ref(), &st.nr, &dr, g.stem_norm.as_mut());
        self.stem_conv
            .backward(&st.input, &dc, &mut g.stem_conv, false)?;
        Ok(g)
    }
}

/// Normalization (when present) followed by ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct NormReluTape<T> {
    pub norm: Option<NormCache<T>>,
    pub out: Tensor4<T>,
}

fn norm_relu<T: Scalar>(
    norm: Option<&BatchNorm<T>>,
    x: &Tensor4<T>,
    mode: Mode,
) -> Result<(Tensor4<T>, NormReluTape<T>)> {
    let (z, cache) = match norm {
        Some(n) => {
            let (z, c) = n.forward(x, mode)?;
            (z, Some(c))
        }
        None => (x.clone(), None),
    };
    let out = relu(&z);
    Ok((out.clone(), NormReluTape { norm: cache, out }))
}

fn norm_relu_backward<T: Scalar>(
    norm: Option<&BatchNorm<T>>,
    tape: &NormReluTape<T>,
    dy: &Tensor4<T>,
    grad: Option<&mut BatchNorm<T>>,
) -> Tensor4<T> {
    let dz = relu_backward(&tape.out, dy);
    match (norm, tape.norm.as_ref(), grad) {
        (Some(n), Some(c), Some(g)) => n.backward(c, &dz, g),
        _ => dz,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayerTape<T> {
    pub input_channels: usize,
    pub nr1: NormReluTape<T>,
    pub nr2: NormReluTape<T>,
}

fn dense_layer_forward_tape<T: Scalar>(
    x: &Tensor4<T>,
    layer: &DenseLayer<T>,
    mode: Mode,
) -> Result<(Tensor4<T>, DenseLayerTape<T>)> {
    let (o1, nr1) = norm_relu(layer.norm1.as_ref(), x, mode)?;
    let m = layer.conv1.forward(&o1)?;
    let (o2, nr2) = norm_relu(layer.norm2.as_ref(), &m, mode)?;
    let new = layer.conv2.forward(&o2)?;
    Ok((
        new,
        DenseLayerTape {
            input_channels: x.c,
            nr1,
            nr2,
        },
    ))
}

fn dense_layer_backward<T: Scalar>(
    layer: &DenseLayer<T>,
    tape: &DenseLayerTape<T>,
    dnew: &Tensor4<T>,
    g: &mut DenseLayer<T>,
) -> Result<Tensor4<T>> {
    let do2 = layer
        .conv2
        .backward(&tape.nr2.out, dnew, &mut g.conv2, true)?
        .expect("input gradient requested");
    let dm = norm_relu_backward(layer.norm2.as_ref(), &tape.nr2, &do2, g.norm2.as_mut());
    let do1 = layer
        .conv1
        .backward(&tape.nr1.out, &dm, &mut g.conv1, true)?
        .expect("input gradient requested");
    Ok(norm_relu_backward(
        layer.norm1.as_ref(),
        &tape.nr1,
        &do1,
        g.norm1.as_mut(),
    ))
}

/// One dense layer: concatenate `inputs` channel-wise, then
/// norm → ReLU → 1×1 conv → norm → ReLU → 3×3 conv.
pub fn dense_layer_forward<T: Scalar>(
    inputs: &[&Tensor4<T>],
    layer: &DenseLayer<T>,
    mode: Mode,
) -> Result<Tensor4<T>> {
    let x = Tensor4::concat_channels(inputs)?;
    Ok(dense_layer_forward_tape(&x, layer, mode)?.0)
}

/// Transition: norm → ReLU → 1×1 conv → 2×2 average pool.
pub fn transition_forward<T: Scalar>(
    x: &Tensor4<T>,
    t: &Transition<T>,
    mode: Mode,
) -> Result<Tensor4<T>> {
    let (o, _) = norm_relu(t.norm.as_ref(), x, mode)?;
    Ok(avg_pool_2x2(&t.conv.forward(&o)?))
}

/// `F(x)` for a single convolution with optional ReLU.
pub fn plain_layer<T: Scalar>(
    x: &Tensor4<T>,
    conv: &Conv2d<T>,
    with_relu: bool,
) -> Result<Tensor4<T>> {
    let y = conv.forward(x)?;
    Ok(if with_relu { relu(&y) } else { y })
}

/// `F(x) + x`.
pub fn residual_layer<T: Scalar>(
    x: &Tensor4<T>,
    conv: &Conv2d<T>,
    with_relu: bool,
) -> Result<Tensor4<T>> {
    let mut y = plain_layer(x, conv, with_relu)?;
    if !y.same_shape(x) {
        return Err(Error::Shape(format!(
            "residual branch produced {:?} for input {:?}",
            y.shape(),
            x.shape()
        )));
    }
    for (a, &b) in y.data.iter_mut().zip(&x.data) {
        *a += b;
    }
    Ok(y)
}

#[derive(Debug, Clone, PartialEq)]
struct StemTape<T> {
    input: Tensor4<T>,
    nr: NormReluTape<T>,
    pool_arg: Vec<usize>,
    pool_input_shape: [usize; 4],
}

#[derive(Debug, Clone, PartialEq)]
struct BlockTape<T> {
    c_in: usize,
    layers: Vec<DenseLayerTape<T>>,
}

#[derive(Debug, Clone, PartialEq)]
struct TransitionTape<T> {
    nr: NormReluTape<T>,
    conv_out_shape: [usize; 4],
}

/// Intermediate values of one forward pass, consumed by the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTape<T> {
    generation: u64,
    mode: Mode,
    stem: StemTape<T>,
    blocks: Vec<BlockTape<T>>,
    transitions: Vec<TransitionTape<T>>,
    final_nr: NormReluTape<T>,
    output: Matrix<T>,
}

impl<T: Scalar> ActivationTape<T> {
    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Features the recorded pass produced.
    pub fn output(&self) -> &Matrix<T> {
        &self.output
    }

    /// Input channel count each dense layer actually saw, grouped by block.
    pub fn dense_input_channels(&self) -> Vec<Vec<usize>> {
        self.blocks
            .iter()
            .map(|b| b.layers.iter().map(|l| l.input_channels).collect())
            .collect()
    }

    fn norm_caches(&self) -> Vec<&NormCache<T>> {
        let mut v = Vec::new();
        v.extend(self.stem.nr.norm.as_ref());
        for (b, block) in self.blocks.iter().enumerate() {
            for l in &block.layers {
                v.extend(l.nr1.norm.as_ref());
                v.extend(l.nr2.norm.as_ref());
            }
            if let Some(t) = self.transitions.get(b) {
                v.extend(t.nr.norm.as_ref());
            }
        }
        v.extend(self.final_nr.norm.as_ref());
        v
    }
}

/// Single-image forward pass.
pub fn network_forward<T: Scalar>(
    img: &ImageTensor<T>,
    params: &NetworkParams<T>,
    mode: Mode,
) -> Result<(FeatureVector<T>, ActivationTape<T>)> {
    let x = Tensor4::from_images(&[img])?;
    let (f, tape) = params.forward(&x, mode)?;
    Ok((
        FeatureVector::new(
            f.row(0).to_vec(),
            format!("densenet[{}]", params.config().describe()),
        ),
        tape,
    ))
}

pub fn network_backward<T: Scalar>(
    tape: &ActivationTape<T>,
    dfeatures: &Matrix<T>,
    params: &NetworkParams<T>,
) -> Result<NetworkParams<T>> {
    params.backward(tape, dfeatures)
}
