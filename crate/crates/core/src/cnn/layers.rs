//! Layer primitives with explicit forward and backward passes. Backward
//! functions accumulate parameter gradients into a same-shaped container.

use rand::Rng as _;
use rayon::prelude::*;

use super::tensor::Tensor4;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::Rng;
use crate::scalar::Scalar;

pub const BN_EPS: f64 = 1e-5;

/// Normalization statistics source.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics.
    Train,
    /// Running statistics.
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// `[out, in, k, k]`.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn zeros(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight: vec![T::zero(); out_channels * in_channels * kernel * kernel],
            bias: vec![T::zero(); out_channels],
        }
    }

    /// Weights uniform in `±sqrt(6 / fan_in)`, zero biases.
    pub fn init(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut Rng,
    ) -> Self {
        let mut c = Self::zeros(in_channels, out_channels, kernel, stride, padding);
        let bound = (6.0 / c.fan_in() as f64).sqrt();
        for w in &mut c.weight {
            *w = T::c(rng.random_range(-bound..bound));
        }
        c
    }

    /// 1×1 convolution copying input channel `i` to output channel `i`.
    pub fn identity(channels: usize) -> Self {
        let mut c = Self::zeros(channels, channels, 1, 1, 0);
        for i in 0..channels {
            c.weight[i * channels + i] = T::one();
        }
        c
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(
            self.in_channels,
            self.out_channels,
            self.kernel,
            self.stride,
            self.padding,
        )
    }

    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (hp, wp) = (h + 2 * self.padding, w + 2 * self.padding);
        if hp < self.kernel || wp < self.kernel {
            return Err(Error::Shape(format!(
                "{h}x{w} input too small for a {k}x{k} kernel with padding {p}",
                k = self.kernel,
                p = self.padding
            )));
        }
        Ok((
            (hp - self.kernel) / self.stride + 1,
            (wp - self.kernel) / self.stride + 1,
        ))
    }

    /// Range of output columns whose tap `kx` lands inside `0..w`.
    #[inline]
    fn valid_range(&self, kx: usize, w: usize, ow: usize) -> (usize, usize) {
        let (s, p) = (self.stride, self.padding);
        // ox·s + kx − p ≥ 0  and  ox·s + kx − p ≤ w − 1
        let lo = if kx >= p { 0 } else { (p - kx).div_ceil(s) };
        let hi = if w + p > kx {
            ((w - 1 + p - kx) / s + 1).min(ow)
        } else {
            0
        };
        (lo, hi.max(lo))
    }

    pub fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        if x.c != self.in_channels {
            return Err(Error::Shape(format!(
                "convolution expects {} input channels, got {}",
                self.in_channels, x.c
            )));
        }
        let (oh, ow) = self.output_size(x.h, x.w)?;
        let mut y = Tensor4::zeros(x.n, self.out_channels, oh, ow);
        let in_len = x.sample_len();
        let out_len = self.out_channels * oh * ow;
        y.data
            .par_chunks_mut(out_len.max(1))
            .zip(x.data.par_chunks(in_len.max(1)))
            .for_each(|(out, inp)| self.forward_sample(inp, out, x.h, x.w, oh, ow));
        Ok(y)
    }

    fn forward_sample(&self, inp: &[T], out: &mut [T], h: usize, w: usize, oh: usize, ow: usize) {
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        let ranges: Vec<(usize, usize)> = (0..k).map(|kx| self.valid_range(kx, w, ow)).collect();
        for oc in 0..self.out_channels {
            let plane = &mut out[oc * oh * ow..(oc + 1) * oh * ow];
            plane.fill(self.bias[oc]);
            for ic in 0..self.in_channels {
                let src = &inp[ic * h * w..(ic + 1) * h * w];
                for ky in 0..k {
                    for (kx, &(lo, hi)) in ranges.iter().enumerate() {
                        let wv = self.weight[((oc * self.in_channels + ic) * k + ky) * k + kx];
                        if wv == T::zero() {
                            continue;
                        }
                        for oy in 0..oh {
                            let iy = (oy * s + ky) as isize - p as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let row = &src[iy as usize * w..(iy as usize + 1) * w];
                            let orow = &mut plane[oy * ow..(oy + 1) * ow];
                            for ox in lo..hi {
                                orow[ox] += wv * row[ox * s + kx - p];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Accumulates weight and bias gradients into `grad`; returns the input
    /// gradient when `need_dx`.
    pub fn backward(
        &self,
        x: &Tensor4<T>,
        dy: &Tensor4<T>,
        grad: &mut Conv2d<T>,
        need_dx: bool,
    ) -> Result<Option<Tensor4<T>>> {
        let (oh, ow) = self.output_size(x.h, x.w)?;
        if dy.shape() != [x.n, self.out_channels, oh, ow] || x.c != self.in_channels {
            return Err(Error::Shape("convolution gradient shape mismatch".into()));
        }
        let (h, w) = (x.h, x.w);
        let in_len = x.sample_len();
        let out_len = self.out_channels * oh * ow;
        let per_sample: Vec<(Vec<T>, Vec<T>, Vec<T>)> = (0..x.n)
            .into_par_iter()
            .map(|n| {
                let inp = &x.data[n * in_len..(n + 1) * in_len];
                let d = &dy.data[n * out_len..(n + 1) * out_len];
                self.backward_sample(inp, d, h, w, oh, ow, need_dx)
            })
            .collect();
        let mut dx = need_dx.then(|| Tensor4::zeros(x.n, x.c, h, w));
        for (n, (dxs, dw, db)) in per_sample.into_iter().enumerate() {
            for (g, v) in grad.weight.iter_mut().zip(dw) {
                *g += v;
            }
            for (g, v) in grad.bias.iter_mut().zip(db) {
                *g += v;
            }
            if let Some(dx) = dx.as_mut() {
                dx.data[n * in_len..(n + 1) * in_len].copy_from_slice(&dxs);
            }
        }
        Ok(dx)
    }

    #[allow(clippy::too_many_arguments)]
    fn backward_sample(
        &self,
        inp: &[T],
        d: &[T],
        h: usize,
        w: usize,
        oh: usize,
        ow: usize,
        need_dx: bool,
    ) -> (Vec<T>, Vec<T>, Vec<T>) {
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        let ranges: Vec<(usize, usize)> = (0..k).map(|kx| self.valid_range(kx, w, ow)).collect();
        let mut dx = if need_dx {
            vec![T::zero(); inp.len()]
        } else {
            Vec::new()
        };
        let mut dw = vec![T::zero(); self.weight.len()];
        let mut db = vec![T::zero(); self.out_channels];
        for oc in 0..self.out_channels {
            let dplane = &d[oc * oh * ow..(oc + 1) * oh * ow];
            db[oc] = dplane.iter().copied().sum();
            for ic in 0..self.in_channels {
                let base = ic * h * w;
                for ky in 0..k {
                    for (kx, &(lo, hi)) in ranges.iter().enumerate() {
                        let wi = ((oc * self.in_channels + ic) * k + ky) * k + kx;
                        let wv = self.weight[wi];
                        let mut acc = T::zero();
                        for oy in 0..oh {
                            let iy = (oy * s + ky) as isize - p as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let roff = base + iy as usize * w;
                            let drow = &dplane[oy * ow..(oy + 1) * ow];
                            for ox in lo..hi {
                                let ii = roff + ox * s + kx - p;
                                acc += drow[ox] * inp[ii];
                                if need_dx {
                                    dx[ii] += wv * drow[ox];
                                }
                            }
                        }
                        dw[wi] = acc;
                    }
                }
            }
        }
        (dx, dw, db)
    }
}

/// Per-channel affine normalization with running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormCache<T> {
    pub mode: Mode,
    pub xhat: Tensor4<T>,
    pub inv_std: Vec<T>,
    pub batch_mean: Vec<T>,
    /// Population variance of the batch.
    pub batch_var: Vec<T>,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
        }
    }

    /// Zero scale and shift; running statistics at their initial values.
    pub fn zeros(channels: usize) -> Self {
        BatchNorm {
            gamma: vec![T::zero(); channels],
            ..Self::new(channels)
        }
    }

    pub fn zeros_like(&self) -> Self {
        let c = self.channels();
        BatchNorm {
            gamma: vec![T::zero(); c],
            beta: vec![T::zero(); c],
            running_mean: vec![T::zero(); c],
            running_var: vec![T::zero(); c],
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&self, x: &Tensor4<T>, mode: Mode) -> Result<(Tensor4<T>, NormCache<T>)> {
        let c = self.channels();
        if x.c != c {
            return Err(Error::Shape(format!(
                "normalization has {c} channels, input has {}",
                x.c
            )));
        }
        let pl = x.plane_len();
        let m = x.n * pl;
        let eps = T::c(BN_EPS);
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for ch in 0..c {
            let mut s = T::zero();
            for n in 0..x.n {
                let o = (n * c + ch) * pl;
                s += x.data[o..o + pl].iter().copied().sum::<T>();
            }
            let mu = s / T::from_count(m);
            let mut v = T::zero();
            for n in 0..x.n {
                let o = (n * c + ch) * pl;
                v += x.data[o..o + pl]
                    .iter()
                    .map(|&a| (a - mu) * (a - mu))
                    .sum::<T>();
            }
            mean[ch] = mu;
            var[ch] = v / T::from_count(m);
        }
        let (use_mean, use_var) = match mode {
            Mode::Train => (&mean, &var),
            Mode::Eval => (&self.running_mean, &self.running_var),
        };
        let inv_std: Vec<T> = use_var.iter().map(|&v| (v + eps).sqrt().recip()).collect();
        let mut xhat = Tensor4::zeros(x.n, c, x.h, x.w);
        let mut y = Tensor4::zeros(x.n, c, x.h, x.w);
        for n in 0..x.n {
            for ch in 0..c {
                let o = (n * c + ch) * pl;
                for i in o..o + pl {
                    let z = (x.data[i] - use_mean[ch]) * inv_std[ch];
                    xhat.data[i] = z;
                    y.data[i] = self.gamma[ch] * z + self.beta[ch];
                }
            }
        }
        Ok((
            y,
            NormCache {
                mode,
                xhat,
                inv_std,
                batch_mean: mean,
                batch_var: var,
            },
        ))
    }

    pub fn backward(
        &self,
        cache: &NormCache<T>,
        dy: &Tensor4<T>,
        grad: &mut BatchNorm<T>,
    ) -> Tensor4<T> {
        let c = self.channels();
        let xh = &cache.xhat;
        let pl = xh.plane_len();
        let m = T::from_count(xh.n * pl);
        let mut dx = Tensor4::zeros(xh.n, c, xh.h, xh.w);
        for ch in 0..c {
            let mut sum_dy = T::zero();
            let mut sum_dy_xhat = T::zero();
            for n in 0..xh.n {
                let o = (n * c + ch) * pl;
                for i in o..o + pl {
                    sum_dy += dy.data[i];
                    sum_dy_xhat += dy.data[i] * xh.data[i];
                }
            }
            grad.gamma[ch] += sum_dy_xhat;
            grad.beta[ch] += sum_dy;
            let g = self.gamma[ch] * cache.inv_std[ch];
            for n in 0..xh.n {
                let o = (n * c + ch) * pl;
                for i in o..o + pl {
                    dx.data[i] = match cache.mode {
                        Mode::Eval => g * dy.data[i],
                        Mode::Train => g / m * (m * dy.data[i] - sum_dy - xh.data[i] * sum_dy_xhat),
                    };
                }
            }
        }
        dx
    }

    /// Exponential moving average of batch statistics; the variance fed in is
    /// the unbiased batch estimate.
    pub fn update_running(&mut self, cache: &NormCache<T>, momentum: T) {
        let count = cache.xhat.n * cache.xhat.plane_len();
        let unbias = if count > 1 {
            T::from_count(count) / T::from_count(count - 1)
        } else {
            T::one()
        };
        let keep = T::one() - momentum;
        for ch in 0..self.channels() {
            self.running_mean[ch] = keep * self.running_mean[ch] + momentum * cache.batch_mean[ch];
            self.running_var[ch] =
                keep * self.running_var[ch] + momentum * cache.batch_var[ch] * unbias;
        }
    }
}

pub fn relu<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    let mut y = x.clone();
    for v in &mut y.data {
        if !(*v > T::zero()) {
            *v = T::zero();
        }
    }
    y
}

/// Gradient through ReLU given its output.
pub fn relu_backward<T: Scalar>(y: &Tensor4<T>, dy: &Tensor4<T>) -> Tensor4<T> {
    let mut dx = dy.clone();
    for (d, &o) in dx.data.iter_mut().zip(&y.data) {
        if !(o > T::zero()) {
            *d = T::zero();
        }
    }
    dx
}

/// 3×3 max pool, stride 2, padding 1 (padding never wins). Returns the
/// pooled map and the flat input index of each maximum.
pub fn max_pool_3x3_s2<T: Scalar>(x: &Tensor4<T>) -> (Tensor4<T>, Vec<usize>) {
    let oh = (x.h + 2 - 3) / 2 + 1;
    let ow = (x.w + 2 - 3) / 2 + 1;
    let mut y = Tensor4::zeros(x.n, x.c, oh, ow);
    let mut arg = vec![0usize; y.data.len()];
    for n in 0..x.n {
        for c in 0..x.c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = T::neg_infinity();
                    let mut best_i = usize::MAX;
                    for dy in 0..3 {
                        let iy = (oy * 2 + dy) as isize - 1;
                        if iy < 0 || iy >= x.h as isize {
                            continue;
                        }
                        for dx in 0..3 {
                            let ix = (ox * 2 + dx) as isize - 1;
                            if ix < 0 || ix >= x.w as isize {
                                continue;
                            }
                            let i = x.index(n, c, iy as usize, ix as usize);
                            if best_i == usize::MAX || x.data[i] > best {
                                best = x.data[i];
                                best_i = i;
                            }
                        }
                    }
                    let o = y.index(n, c, oy, ox);
                    y.data[o] = best;
                    arg[o] = best_i;
                }
            }
        }
    }
    (y, arg)
}

pub fn max_pool_backward<T: Scalar>(
    dy: &Tensor4<T>,
    arg: &[usize],
    input_shape: [usize; 4],
) -> Tensor4<T> {
    let [n, c, h, w] = input_shape;
    let mut dx = Tensor4::zeros(n, c, h, w);
    for (&i, &g) in arg.iter().zip(&dy.data) {
        dx.data[i] += g;
    }
    dx
}

/// 2×2 average pool with stride 2; an odd trailing row or column is
/// edge-replicated before pooling.
pub fn avg_pool_2x2<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    let (oh, ow) = (x.h.div_ceil(2), x.w.div_ceil(2));
    let quarter = T::c(0.25);
    let mut y = Tensor4::zeros(x.n, x.c, oh, ow);
    for n in 0..x.n {
        for c in 0..x.c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = T::zero();
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let iy = (oy * 2 + dy).min(x.h - 1);
                            let ix = (ox * 2 + dx).min(x.w - 1);
                            s += x.get(n, c, iy, ix);
                        }
                    }
                    y.set(n, c, oy, ox, s * quarter);
                }
            }
        }
    }
    y
}

pub fn avg_pool_backward<T: Scalar>(dy: &Tensor4<T>, input_shape: [usize; 4]) -> Tensor4<T> {
    let [n, c, h, w] = input_shape;
    let quarter = T::c(0.25);
    let mut dx = Tensor4::zeros(n, c, h, w);
    for b in 0..n {
        for ch in 0..c {
            for oy in 0..dy.h {
                for ox in 0..dy.w {
                    let g = dy.get(b, ch, oy, ox) * quarter;
                    for ddy in 0..2 {
                        for ddx in 0..2 {
                            let iy = (oy * 2 + ddy).min(h - 1);
                            let ix = (ox * 2 + ddx).min(w - 1);
                            let i = dx.index(b, ch, iy, ix);
                            dx.data[i] += g;
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Mean over the spatial plane: one row per sample.
pub fn global_avg_pool<T: Scalar>(x: &Tensor4<T>) -> Matrix<T> {
    let pl = x.plane_len();
    let denom = T::from_count(pl);
    Matrix::from_fn(x.n, x.c, |n, c| {
        let o = (n * x.c + c) * pl;
        x.data[o..o + pl].iter().copied().sum::<T>() / denom
    })
}

pub fn global_avg_pool_backward<T: Scalar>(dy: &Matrix<T>, input_shape: [usize; 4]) -> Tensor4<T> {
    let [n, c, h, w] = input_shape;
    let pl = h * w;
    let denom = T::from_count(pl);
    let mut dx = Tensor4::zeros(n, c, h, w);
    for b in 0..n {
        for ch in 0..c {
            let g = dy[(b, ch)] / denom;
            let o = (b * c + ch) * pl;
            dx.data[o..o + pl].fill(g);
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use proptest::prelude::*;

    /// Direct nested-loop convolution.
    pub(crate) fn naive_conv(c: &Conv2d<f64>, x: &Tensor4<f64>) -> Tensor4<f64> {
        let oh = (x.h + 2 * c.padding - c.kernel) / c.stride + 1;
        let ow = (x.w + 2 * c.padding - c.kernel) / c.stride + 1;
        let mut y = Tensor4::zeros(x.n, c.out_channels, oh, ow);
        for n in 0..x.n {
            for o in 0..c.out_channels {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut s = c.bias[o];
                        for i in 0..c.in_channels {
                            for ky in 0..c.kernel {
                                for kx in 0..c.kernel {
                                    let iy = (oy * c.stride + ky) as isize - c.padding as isize;
                                    let ix = (ox * c.stride + kx) as isize - c.padding as isize;
                                    if iy >= 0
                                        && ix >= 0
                                        && (iy as usize) < x.h
                                        && (ix as usize) < x.w
                                    {
                                        s += c.weight[((o * c.in_channels + i) * c.kernel + ky)
                                            * c.kernel
                                            + kx]
                                            * x.get(n, i, iy as usize, ix as usize);
                                    }
                                }
                            }
                        }
                        y.set(n, o, oy, ox, s);
                    }
                }
            }
        }
        y
    }

    fn random_tensor(n: usize, c: usize, h: usize, w: usize, seed: u64) -> Tensor4<f64> {
        let mut rng = stream_rng(seed, 99, 0);
        let data = (0..n * c * h * w)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        Tensor4::from_vec(n, c, h, w, data).unwrap()
    }

    #[test]
    fn conv_matches_naive_oracle() {
        for (k, s, p, seed) in [(3, 1, 1, 1), (7, 2, 3, 2), (1, 1, 0, 3), (3, 2, 0, 4)] {
            let mut rng = stream_rng(seed, 1, 0);
            let mut c = Conv2d::init(3, 4, k, s, p, &mut rng);
            for b in &mut c.bias {
                *b = rng.random_range(-0.5..0.5);
            }
            let x = random_tensor(2, 3, 9, 7, seed);
            let got = c.forward(&x).unwrap();
            let want = naive_conv(&c, &x);
            assert_eq!(got.shape(), want.shape());
            for (a, b) in got.data.iter().zip(&want.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = stream_rng(5, 1, 0);
        let c = Conv2d::init(2, 3, 3, 2, 1, &mut rng);
        let x = random_tensor(2, 2, 5, 6, 8);
        let y = c.forward(&x).unwrap();
        let dy = random_tensor(y.n, y.c, y.h, y.w, 9);
        let loss = |c: &Conv2d<f64>, x: &Tensor4<f64>| -> f64 {
            let y = c.forward(x).unwrap();
            y.data.iter().zip(&dy.data).map(|(a, b)| a * b).sum()
        };
        let mut g = c.zeros_like();
        let dx = c.backward(&x, &dy, &mut g, true).unwrap().unwrap();
        let h = 1e-6;
        for i in 0..c.weight.len() {
            let mut cp = c.clone();
            cp.weight[i] += h;
            let mut cm = c.clone();
            cm.weight[i] -= h;
            let fd = (loss(&cp, &x) - loss(&cm, &x)) / (2.0 * h);
            assert!((fd - g.weight[i]).abs() < 1e-7);
        }
        for i in 0..x.data.len() {
            let mut xp = x.clone();
            xp.data[i] += h;
            let mut xm = x.clone();
            xm.data[i] -= h;
            let fd = (loss(&c, &xp) - loss(&c, &xm)) / (2.0 * h);
            assert!((fd - dx.data[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn batchnorm_train_backward_matches_finite_differences() {
        let mut bn = BatchNorm::<f64>::new(2);
        bn.gamma = vec![1.3, -0.7];
        bn.beta = vec![0.1, 0.4];
        let x = random_tensor(3, 2, 2, 2, 11);
        let dy = random_tensor(3, 2, 2, 2, 12);
        let loss = |bn: &BatchNorm<f64>, x: &Tensor4<f64>| -> f64 {
            let (y, _) = bn.forward(x, Mode::Train).unwrap();
            y.data.iter().zip(&dy.data).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = bn.forward(&x, Mode::Train).unwrap();
        let mut g = bn.zeros_like();
        let dx = bn.backward(&cache, &dy, &mut g);
        let h = 1e-6;
        for i in 0..x.data.len() {
            let mut xp = x.clone();
            xp.data[i] += h;
            let mut xm = x.clone();
            xm.data[i] -= h;
            let fd = (loss(&bn, &xp) - loss(&bn, &xm)) / (2.0 * h);
            assert!((fd - dx.data[i]).abs() < 1e-6, "{fd} vs {}", dx.data[i]);
        }
        for ch in 0..2 {
            let mut bp = bn.clone();
            bp.gamma[ch] += h;
            let mut bm = bn.clone();
            bm.gamma[ch] -= h;
            let fd = (loss(&bp, &x) - loss(&bm, &x)) / (2.0 * h);
            assert!((fd - g.gamma[ch]).abs() < 1e-6);
        }
    }

    #[test]
    fn running_statistics_follow_momentum() {
        let mut bn = BatchNorm::<f64>::new(1);
        let x = Tensor4::from_vec(1, 1, 1, 2, vec![1.0, 3.0]).unwrap();
        let (_, cache) = bn.forward(&x, Mode::Train).unwrap();
        bn.update_running(&cache, 0.1);
        assert!((bn.running_mean[0] - 0.2).abs() < 1e-15);
        // unbiased variance of {1, 3} is 2
        assert!((bn.running_var[0] - (0.9 + 0.2)).abs() < 1e-15);
    }

    #[test]
    fn avg_pool_examples() {
        let x = Tensor4::from_vec(1, 1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(avg_pool_2x2(&x).data, vec![2.5]);
        let c = Tensor4::from_vec(1, 1, 3, 5, vec![0.7f64; 15]).unwrap();
        let y = avg_pool_2x2(&c);
        assert_eq!((y.h, y.w), (2, 3));
        assert!(y.data.iter().all(|&v| (v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn pool_backwards_match_finite_differences() {
        let x = random_tensor(2, 2, 5, 3, 21);
        let dyp = random_tensor(2, 2, 3, 2, 22);
        let loss = |x: &Tensor4<f64>| -> f64 {
            avg_pool_2x2(x)
                .data
                .iter()
                .zip(&dyp.data)
                .map(|(a, b)| a * b)
                .sum()
        };
        let dx = avg_pool_backward(&dyp, x.shape());
        let h = 1e-6;
        for i in 0..x.data.len() {
            let mut xp = x.clone();
            xp.data[i] += h;
            let mut xm = x.clone();
            xm.data[i] -= h;
            assert!(((loss(&xp) - loss(&xm)) / (2.0 * h) - dx.data[i]).abs() < 1e-8);
        }
        let (y, arg) = max_pool_3x3_s2(&x);
        assert_eq!((y.h, y.w), (3, 2));
        let dm = random_tensor(2, 2, 3, 2, 23);
        let dx = max_pool_backward(&dm, &arg, x.shape());
        let mloss = |x: &Tensor4<f64>| -> f64 {
            max_pool_3x3_s2(x)
                .0
                .data
                .iter()
                .zip(&dm.data)
                .map(|(a, b)| a * b)
                .sum()
        };
        for i in 0..x.data.len() {
            let mut xp = x.clone();
            xp.data[i] += h;
            let mut xm = x.clone();
            xm.data[i] -= h;
            assert!(((mloss(&xp) - mloss(&xm)) / (2.0 * h) - dx.data[i]).abs() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn gap_is_invariant_to_spatial_permutation(seed in 0u64..1000, h in 1usize..6, w in 1usize..6) {
            let x = random_tensor(2, 3, h, w, seed);
            let mut rng = stream_rng(seed, 98, 0);
            let mut perm: Vec<usize> = (0..h * w).collect();
            for i in (1..perm.len()).rev() {
                let j = rng.random_range(0..=i);
                perm.swap(i, j);
            }
            let mut shuffled = x.clone();
            let pl = h * w;
            for nc in 0..6 {
                for (dst, &src) in perm.iter().enumerate() {
                    shuffled.data[nc * pl + dst] = x.data[nc * pl + src];
                }
            }
            let a = global_avg_pool(&x);
            let b = global_avg_pool(&shuffled);
            for (u, v) in a.as_slice().iter().zip(b.as_slice()) {
                prop_assert!((u - v).abs() < 1e-12);
            }
        }
    }
}
