//! Layers with cached forward state and hand-written vector-Jacobian products.
//!
//! Every layer records what its backward pass needs during
//! [`Layer::forward`]; [`Layer::backward`] consumes the upstream gradient,
//! accumulates parameter gradients and returns the gradient for the input.
//! [`Layer::infer`] is the read-only evaluation path and never records.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{KernelError, KernelRng, Parameter, Shape3, Tensor3};

/// Training or evaluation behavior for batchnorm and dropout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

pub const BATCHNORM_MOMENTUM: f64 = 0.1;
pub const BATCHNORM_EPS: f64 = 1e-5;

/// Declarative description of one layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Deconv1d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Batchnorm1d {
        channels: usize,
    },
    Relu,
    Identity,
    Maxpool1d {
        kernel: usize,
    },
    Dropout {
        p: f64,
    },
    Linear {
        in_features: usize,
        out_features: usize,
    },
}

impl LayerSpec {
    /// Length-preserving convolution (kernel 3, stride 1, padding 1).
    pub fn conv3(in_channels: usize, out_channels: usize) -> Self {
        Self::Conv1d {
            in_channels,
            out_channels,
            kernel: 3,
            stride: 1,
            padding: 1,
        }
    }

    /// Length-preserving transposed convolution (kernel 3, stride 1, padding 1).
    pub fn deconv3(in_channels: usize, out_channels: usize) -> Self {
        Self::Deconv1d {
            in_channels,
            out_channels,
            kernel: 3,
            stride: 1,
            padding: 1,
        }
    }

    /// Output shape for a given input shape, or a shape error.
    pub fn output_shape(&self, input: Shape3) -> Result<Shape3, KernelError> {
        let mismatch = |expected: String| KernelError::ShapeMismatch {
            layer: self.kind_name().into(),
            expected,
            got: input.to_string(),
        };
        match *self {
            Self::Conv1d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                if input.channels != in_channels {
                    return Err(mismatch(format!("[B, {in_channels}, L]")));
                }
                let padded = input.len + 2 * padding;
                if padded < kernel || stride == 0 {
                    return Err(mismatch(format!("length >= {}", kernel.saturating_sub(2 * padding))));
                }
                Ok(Shape3::new(input.batch, out_channels, (padded - kernel) / stride + 1))
            }
            Self::Deconv1d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                if input.channels != in_channels || input.len == 0 {
                    return Err(mismatch(format!("[B, {in_channels}, L>0]")));
                }
                let full = (input.len - 1) * stride + kernel;
                if full < 2 * padding + 1 {
                    return Err(mismatch("longer input".into()));
                }
                Ok(Shape3::new(input.batch, out_channels, full - 2 * padding))
            }
            Self::Batchnorm1d { channels } => {
                if input.channels != channels {
                    return Err(mismatch(format!("[B, {channels}, L]")));
                }
                Ok(input)
            }
            Self::Relu | Self::Identity | Self::Dropout { .. } => Ok(input),
            Self::Maxpool1d { kernel } => {
                if kernel == 0 || input.len < kernel {
                    return Err(mismatch(format!("length >= {kernel}")));
                }
                Ok(Shape3::new(input.batch, input.channels, input.len / kernel))
            }
            Self::Linear {
                in_features,
                out_features,
            } => {
                if input.channels * input.len != in_features {
                    return Err(mismatch(format!("C*L = {in_features}")));
                }
                Ok(Shape3::new(input.batch, out_features, 1))
            }
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::Conv1d { .. } => "conv1d",
            Self::Deconv1d { .. } => "deconv1d",
            Self::Batchnorm1d { .. } => "batchnorm1d",
            Self::Relu => "relu",
            Self::Identity => "identity",
            Self::Maxpool1d { .. } => "maxpool1d",
            Self::Dropout { .. } => "dropout",
            Self::Linear { .. } => "linear",
        }
    }

    /// Number of trainable scalars this layer owns.
    pub fn parameter_count(&self) -> usize {
        match *self {
            Self::Conv1d {
                in_channels,
                out_channels,
                kernel,
                ..
            }
            | Self::Deconv1d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => in_channels * out_channels * kernel + out_channels,
            Self::Batchnorm1d { channels } => 2 * channels,
            Self::Linear {
                in_features,
                out_features,
            } => in_features * out_features + out_features,
            Self::Relu | Self::Identity | Self::Maxpool1d { .. } | Self::Dropout { .. } => 0,
        }
    }
}

fn uniform_init(len: usize, bound: f64, rng: &mut KernelRng) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-bound..bound)).collect()
}

/// A layer instance: spec, parameters, buffers and the recorded forward cache.
#[derive(Clone, Debug)]
pub struct Layer {
    name: String,
    spec: LayerSpec,
    params: Vec<Parameter>,
    cache: Option<Cache>,
}

#[derive(Clone, Debug)]
enum Cache {
    Input(Tensor3),
    BatchNorm {
        xhat: Tensor3,
        inv_std: Vec<f64>,
        // eval mode: statistics are constants, not functions of the batch
        fixed_stats: bool,
    },
    Relu(Vec<bool>),
    MaxPool {
        input_shape: Shape3,
        argmax: Vec<usize>,
    },
    Dropout(Vec<f64>),
    Passthrough,
}

impl Layer {
    /// Builds a layer with PyTorch-style uniform initialization
    /// (`U(-1/sqrt(fan_in), 1/sqrt(fan_in))` for weights and biases).
    pub fn new(name: impl Into<String>, spec: LayerSpec, rng: &mut KernelRng) -> Self {
        let name = name.into();
        let params = match spec {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => {
                let bound = 1.0 / ((in_channels * kernel) as f64).sqrt();
                vec![
                    Parameter::new(
                        format!("{name}.weight"),
                        vec![out_channels, in_channels, kernel],
                        uniform_init(out_channels * in_channels * kernel, bound, rng),
                    ),
                    Parameter::new(
                        format!("{name}.bias"),
                        vec![out_channels],
                        uniform_init(out_channels, bound, rng),
                    ),
                ]
            }
            LayerSpec::Deconv1d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => {
                let bound = 1.0 / ((out_channels * kernel) as f64).sqrt();
                vec![
                    Parameter::new(
                        format!("{name}.weight"),
                        vec![in_channels, out_channels, kernel],
                        uniform_init(in_channels * out_channels * kernel, bound, rng),
                    ),
                    Parameter::new(
                        format!("{name}.bias"),
                        vec![out_channels],
                        uniform_init(out_channels, bound, rng),
                    ),
                ]
            }
            LayerSpec::Batchnorm1d { channels } => vec![
                Parameter::new(format!("{name}.gamma"), vec![channels], vec![1.0; channels]),
                Parameter::new(format!("{name}.beta"), vec![channels], vec![0.0; channels]),
                Parameter::buffer(format!("{name}.running_mean"), vec![channels], vec![0.0; channels]),
                Parameter::buffer(format!("{name}.running_var"), vec![channels], vec![1.0; channels]),
            ],
            LayerSpec::Linear {
                in_features,
                out_features,
            } => {
                let bound = 1.0 / (in_features as f64).sqrt();
                vec![
                    Parameter::new(
                        format!("{name}.weight"),
                        vec![out_features, in_features],
                        uniform_init(out_features * in_features, bound, rng),
                    ),
                    Parameter::new(
                        format!("{name}.bias"),
                        vec![out_features],
                        uniform_init(out_features, bound, rng),
                    ),
                ]
            }
            LayerSpec::Relu | LayerSpec::Identity | LayerSpec::Maxpool1d { .. } | LayerSpec::Dropout { .. } => {
                Vec::new()
            }
        };
        Self {
            name,
            spec,
            params,
            cache: None,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn has_recorded_forward(&self) -> bool {
        self.cache.is_some()
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    fn check_input(&self, x: &Tensor3) -> Result<Shape3, KernelError> {
        self.spec.output_shape(x.shape()).map_err(|e| match e {
            KernelError::ShapeMismatch { expected, got, .. } => KernelError::ShapeMismatch {
                layer: format!("{} ({})", self.name, self.spec.kind_name()),
                expected,
                got,
            },
            other => other,
        })
    }

    /// Forward pass that records the state needed by [`Layer::backward`].
    pub fn forward(&mut self, x: &Tensor3, mode: Mode, rng: &mut KernelRng) -> Result<Tensor3, KernelError> {
        let out_shape = self.check_input(x)?;
        let (out, cache) = match self.spec {
            LayerSpec::Conv1d { stride, padding, kernel, .. } => (
                conv1d(x, &self.params[0].value, &self.params[1].value, out_shape, kernel, stride, padding),
                Cache::Input(x.clone()),
            ),
            LayerSpec::Deconv1d { stride, padding, kernel, .. } => (
                deconv1d(x, &self.params[0].value, &self.params[1].value, out_shape, kernel, stride, padding),
                Cache::Input(x.clone()),
            ),
            LayerSpec::Batchnorm1d { .. } => self.batchnorm_forward(x, mode),
            LayerSpec::Relu => {
                let mask: Vec<bool> = x.data().iter().map(|&v| v > 0.0).collect();
                (x.map(|v| v.max(0.0)), Cache::Relu(mask))
            }
            LayerSpec::Identity => (x.clone(), Cache::Passthrough),
            LayerSpec::Maxpool1d { kernel } => {
                let (out, argmax) = maxpool(x, out_shape, kernel);
                (
                    out,
                    Cache::MaxPool {
                        input_shape: x.shape(),
                        argmax,
                    },
                )
            }
            LayerSpec::Dropout { p } => match mode {
                Mode::Eval => (x.clone(), Cache::Dropout(vec![1.0; x.data().len()])),
                Mode::Train => {
                    let keep = 1.0 - p;
                    let scale: Vec<f64> = (0..x.data().len())
                        .map(|_| if p > 0.0 && rng.random::<f64>() < p { 0.0 } else { 1.0 / keep })
                        .collect();
                    let mut out = x.clone();
                    out.data_mut().iter_mut().zip(&scale).for_each(|(v, s)| *v *= s);
                    (out, Cache::Dropout(scale))
                }
            },
            LayerSpec::Linear { .. } => (
                linear(x, &self.params[0].value, &self.params[1].value, out_shape),
                Cache::Input(x.clone()),
            ),
        };
        self.cache = Some(cache);
        Ok(out)
    }

    /// Evaluation-mode forward on immutable state; records nothing.
    pub fn infer(&self, x: &Tensor3) -> Result<Tensor3, KernelError> {
        let out_shape = self.check_input(x)?;
        Ok(match self.spec {
            LayerSpec::Conv1d { stride, padding, kernel, .. } => {
                conv1d(x, &self.params[0].value, &self.params[1].value, out_shape, kernel, stride, padding)
            }
            LayerSpec::Deconv1d { stride, padding, kernel, .. } => {
                deconv1d(x, &self.params[0].value, &self.params[1].value, out_shape, kernel, stride, padding)
            }
            LayerSpec::Batchnorm1d { .. } => self.batchnorm_eval(x).0,
            LayerSpec::Relu => x.map(|v| v.max(0.0)),
            LayerSpec::Identity | LayerSpec::Dropout { .. } => x.clone(),
            LayerSpec::Maxpool1d { kernel } => maxpool(x, out_shape, kernel).0,
            LayerSpec::Linear { .. } => linear(x, &self.params[0].value, &self.params[1].value, out_shape),
        })
    }

    fn batchnorm_eval(&self, x: &Tensor3) -> (Tensor3, Cache) {
        let s = x.shape();
        let (gamma, beta) = (&self.params[0].value, &self.params[1].value);
        let (rmean, rvar) = (&self.params[2].value, &self.params[3].value);
        let inv_std: Vec<f64> = rvar.iter().map(|v| 1.0 / (v + BATCHNORM_EPS).sqrt()).collect();
        let mut xhat = Tensor3::zeros(s);
        let mut out = Tensor3::zeros(s);
        for b in 0..s.batch {
            for c in 0..s.channels {
                let (m, is) = (rmean[c], inv_std[c]);
                let src = x.row(b, c);
                let xh = xhat.row_mut(b, c);
                for (h, &v) in xh.iter_mut().zip(src) {
                    *h = (v - m) * is;
                }
                let xh = xhat.row(b, c).to_vec();
                for (o, h) in out.row_mut(b, c).iter_mut().zip(xh) {
                    *o = gamma[c] * h + beta[c];
                }
            }
        }
        (out, Cache::BatchNorm { xhat, inv_std, fixed_stats: true })
    }

    fn batchnorm_forward(&mut self, x: &Tensor3, mode: Mode) -> (Tensor3, Cache) {
        if mode == Mode::Eval {
            return self.batchnorm_eval(x);
        }
        let s = x.shape();
        let n = (s.batch * s.len) as f64;
        let mut mean = vec![0.0; s.channels];
        let mut var = vec![0.0; s.channels];
        for c in 0..s.channels {
            let mut acc = 0.0;
            for b in 0..s.batch {
                acc += x.row(b, c).iter().sum::<f64>();
            }
            mean[c] = acc / n;
            let mut acc = 0.0;
            for b in 0..s.batch {
                acc += x.row(b, c).iter().map(|v| (v - mean[c]).powi(2)).sum::<f64>();
            }
            var[c] = acc / n;
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BATCHNORM_EPS).sqrt()).collect();
        let mut xhat = Tensor3::zeros(s);
        let mut out = Tensor3::zeros(s);
        {
            let gamma = &self.params[0].value;
            let beta = &self.params[1].value;
            for b in 0..s.batch {
                for c in 0..s.channels {
                    for t in 0..s.len {
                        let h = (x.get(b, c, t) - mean[c]) * inv_std[c];
                        xhat.set(b, c, t, h);
                        out.set(b, c, t, gamma[c] * h + beta[c]);
                    }
                }
            }
        }
        let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
        for c in 0..s.channels {
            let rm = &mut self.params[2].value[c];
            *rm = (1.0 - BATCHNORM_MOMENTUM) * *rm + BATCHNORM_MOMENTUM * mean[c];
            let rv = &mut self.params[3].value[c];
            *rv = (1.0 - BATCHNORM_MOMENTUM) * *rv + BATCHNORM_MOMENTUM * var[c] * unbias;
        }
        (out, Cache::BatchNorm { xhat, inv_std, fixed_stats: false })
    }

    /// Backpropagates `grad` (shaped like the last forward output).
    ///
    /// Parameter gradients are accumulated, not overwritten; call
    /// [`Parameter::zero_grad`] between steps.
    pub fn backward(&mut self, grad: &Tensor3) -> Result<Tensor3, KernelError> {
        let cache = self.cache.take().ok_or_else(|| KernelError::NoRecordedForward {
            layer: self.name.clone(),
        })?;
        let result = self.backward_with(&cache, grad);
        self.cache = Some(cache);
        result
    }

    fn backward_with(&mut self, cache: &Cache, grad: &Tensor3) -> Result<Tensor3, KernelError> {
        match (&self.spec, cache) {
            (&LayerSpec::Conv1d { kernel, stride, padding, .. }, Cache::Input(x)) => {
                self.expect_grad_shape(grad, self.spec.output_shape(x.shape())?)?;
                let (w, rest) = self.params.split_at_mut(1);
                Ok(conv1d_backward(x, grad, &w[0].value, &mut w[0].grad, &mut rest[0].grad, kernel, stride, padding))
            }
            (&LayerSpec::Deconv1d { kernel, stride, padding, .. }, Cache::Input(x)) => {
                self.expect_grad_shape(grad, self.spec.output_shape(x.shape())?)?;
                let (w, rest) = self.params.split_at_mut(1);
                Ok(deconv1d_backward(x, grad, &w[0].value, &mut w[0].grad, &mut rest[0].grad, kernel, stride, padding))
            }
            (LayerSpec::Linear { .. }, Cache::Input(x)) => {
                self.expect_grad_shape(grad, self.spec.output_shape(x.shape())?)?;
                let (w, rest) = self.params.split_at_mut(1);
                Ok(linear_backward(x, grad, &w[0].value, &mut w[0].grad, &mut rest[0].grad))
            }
            (LayerSpec::Batchnorm1d { .. }, Cache::BatchNorm { xhat, inv_std, fixed_stats }) => {
                self.expect_grad_shape(grad, xhat.shape())?;
                Ok(self.batchnorm_backward(xhat, inv_std, *fixed_stats, grad))
            }
            (LayerSpec::Relu, Cache::Relu(mask)) => {
                self.expect_len(grad, mask.len())?;
                let mut out = grad.clone();
                out.data_mut().iter_mut().zip(mask).for_each(|(g, &m)| {
                    if !m {
                        *g = 0.0
                    }
                });
                Ok(out)
            }
            (LayerSpec::Identity, Cache::Passthrough) => Ok(grad.clone()),
            (LayerSpec::Dropout { .. }, Cache::Dropout(scale)) => {
                self.expect_len(grad, scale.len())?;
                let mut out = grad.clone();
                out.data_mut().iter_mut().zip(scale).for_each(|(g, s)| *g *= s);
                Ok(out)
            }
            (LayerSpec::Maxpool1d { .. }, Cache::MaxPool { input_shape, argmax }) => {
                self.expect_len(grad, argmax.len())?;
                let mut out = Tensor3::zeros(*input_shape);
                for (g, &i) in grad.data().iter().zip(argmax) {
                    out.data_mut()[i] += g;
                }
                Ok(out)
            }
            _ => Err(KernelError::NoRecordedForward {
                layer: self.name.clone(),
            }),
        }
    }

    fn expect_grad_shape(&self, grad: &Tensor3, expected: Shape3) -> Result<(), KernelError> {
        if grad.shape() != expected {
            return Err(KernelError::ShapeMismatch {
                layer: format!("{} (backward)", self.name),
                expected: expected.to_string(),
                got: grad.shape().to_string(),
            });
        }
        Ok(())
    }

    fn expect_len(&self, grad: &Tensor3, n: usize) -> Result<(), KernelError> {
        if grad.data().len() != n {
            return Err(KernelError::ShapeMismatch {
                layer: format!("{} (backward)", self.name),
                expected: format!("{n} elements"),
                got: grad.shape().to_string(),
            });
        }
        Ok(())
    }

    fn batchnorm_backward(&mut self, xhat: &Tensor3, inv_std: &[f64], fixed_stats: bool, grad: &Tensor3) -> Tensor3 {
        let s = xhat.shape();
        let n = (s.batch * s.len) as f64;
        let mut dx = Tensor3::zeros(s);
        for c in 0..s.channels {
            let mut sum_g = 0.0;
            let mut sum_gx = 0.0;
            for b in 0..s.batch {
                for (g, h) in grad.row(b, c).iter().zip(xhat.row(b, c)) {
                    sum_g += g;
                    sum_gx += g * h;
                }
            }
            self.params[0].grad[c] += sum_gx;
            self.params[1].grad[c] += sum_g;
            let gamma = self.params[0].value[c];
            if fixed_stats {
                let is = inv_std[c];
                for b in 0..s.batch {
                    for (d, g) in dx.row_mut(b, c).iter_mut().zip(grad.row(b, c)) {
                        *d = gamma * is * g;
                    }
                }
            } else {
                let k = gamma * inv_std[c] / n;
                for b in 0..s.batch {
                    let xh = xhat.row(b, c);
                    let g = grad.row(b, c);
                    let d = dx.row_mut(b, c);
                    for t in 0..s.len {
                        d[t] = k * (n * g[t] - sum_g - xh[t] * sum_gx);
                    }
                }
            }
        }
        dx
    }
}

/// Valid output index range `[lo, hi)` for kernel tap `k` at stride 1.
#[inline]
fn tap_range(k: usize, padding: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    // input index = t + k - padding must lie in [0, in_len)
    let lo = padding.saturating_sub(k);
    let hi = (in_len + padding).saturating_sub(k).min(out_len);
    (lo, hi.max(lo))
}

fn conv1d(
    x: &Tensor3,
    weight: &[f64],
    bias: &[f64],
    out_shape: Shape3,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Tensor3 {
    let s = x.shape();
    let mut out = Tensor3::zeros(out_shape);
    for b in 0..s.batch {
        for o in 0..out_shape.channels {
            let y = out.row_mut(b, o);
            y.iter_mut().for_each(|v| *v = bias[o]);
            for i in 0..s.channels {
                let xi = x.row(b, i);
                for k in 0..kernel {
                    let w = weight[(o * s.channels + i) * kernel + k];
                    if stride == 1 {
                        let (lo, hi) = tap_range(k, padding, s.len, out_shape.len);
                        let off = k as isize - padding as isize;
                        for t in lo..hi {
                            y[t] += w * xi[(t as isize + off) as usize];
                        }
                    } else {
                        for (t, yv) in y.iter_mut().enumerate() {
                            let src = (t * stride + k) as isize - padding as isize;
                            if src >= 0 && (src as usize) < s.len {
                                *yv += w * xi[src as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv1d_backward(
    x: &Tensor3,
    grad: &Tensor3,
    weight: &[f64],
    dweight: &mut [f64],
    dbias: &mut [f64],
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Tensor3 {
    let s = x.shape();
    let gs = grad.shape();
    let mut dx = Tensor3::zeros(s);
    for b in 0..s.batch {
        for o in 0..gs.channels {
            let g = grad.row(b, o);
            dbias[o] += g.iter().sum::<f64>();
            for i in 0..s.channels {
                let xi = x.row(b, i).to_vec();
                let di = dx.row_mut(b, i);
                for k in 0..kernel {
                    let widx = (o * s.channels + i) * kernel + k;
                    let w = weight[widx];
                    let mut dw = 0.0;
                    for (t, &gv) in g.iter().enumerate() {
                        let src = (t * stride + k) as isize - padding as isize;
                        if src >= 0 && (src as usize) < s.len {
                            let src = src as usize;
                            dw += gv * xi[src];
                            di[src] += w * gv;
                        }
                    }
                    dweight[widx] += dw;
                }
            }
        }
    }
    dx
}

fn deconv1d(
    x: &Tensor3,
    weight: &[f64],
    bias: &[f64],
    out_shape: Shape3,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Tensor3 {
    let s = x.shape();
    let oc = out_shape.channels;
    let mut out = Tensor3::zeros(out_shape);
    for b in 0..s.batch {
        for o in 0..oc {
            out.row_mut(b, o).iter_mut().for_each(|v| *v = bias[o]);
        }
        for i in 0..s.channels {
            let xi = x.row(b, i).to_vec();
            for o in 0..oc {
                let y = out.row_mut(b, o);
                for k in 0..kernel {
                    let w = weight[(i * oc + o) * kernel + k];
                    for (t, &xv) in xi.iter().enumerate() {
                        let dst = (t * stride + k) as isize - padding as isize;
                        if dst >= 0 && (dst as usize) < out_shape.len {
                            y[dst as usize] += w * xv;
                        }
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn deconv1d_backward(
    x: &Tensor3,
    grad: &Tensor3,
    weight: &[f64],
    dweight: &mut [f64],
    dbias: &mut [f64],
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Tensor3 {
    let s = x.shape();
    let gs = grad.shape();
    let oc = gs.channels;
    let mut dx = Tensor3::zeros(s);
    for b in 0..s.batch {
        for o in 0..oc {
            dbias[o] += grad.row(b, o).iter().sum::<f64>();
        }
        for i in 0..s.channels {
            let xi = x.row(b, i).to_vec();
            let mut di = vec![0.0; s.len];
            for o in 0..oc {
                let g = grad.row(b, o);
                for k in 0..kernel {
                    let widx = (i * oc + o) * kernel + k;
                    let w = weight[widx];
                    let mut dw = 0.0;
                    for t in 0..s.len {
                        let dst = (t * stride + k) as isize - padding as isize;
                        if dst >= 0 && (dst as usize) < gs.len {
                            let gv = g[dst as usize];
                            dw += gv * xi[t];
                            di[t] += w * gv;
                        }
                    }
                    dweight[widx] += dw;
                }
            }
            dx.row_mut(b, i).copy_from_slice(&di);
        }
    }
    dx
}

fn maxpool(x: &Tensor3, out_shape: Shape3, kernel: usize) -> (Tensor3, Vec<usize>) {
    let s = x.shape();
    let mut out = Tensor3::zeros(out_shape);
    let mut argmax = Vec::with_capacity(out_shape.numel());
    for b in 0..s.batch {
        for c in 0..s.channels {
            for t in 0..out_shape.len {
                let base = x.index(b, c, t * kernel);
                let mut best = base;
                for j in 1..kernel {
                    if x.data()[base + j] > x.data()[best] {
                        best = base + j;
                    }
                }
                out.set(b, c, t, x.data()[best]);
                argmax.push(best);
            }
        }
    }
    (out, argmax)
}

fn linear(x: &Tensor3, weight: &[f64], bias: &[f64], out_shape: Shape3) -> Tensor3 {
    let s = x.shape();
    let inf = s.channels * s.len;
    let outf = out_shape.channels;
    let mut out = Tensor3::zeros(out_shape);
    for b in 0..s.batch {
        let xb = &x.data()[b * inf..(b + 1) * inf];
        for o in 0..outf {
            let w = &weight[o * inf..(o + 1) * inf];
            let dot: f64 = w.iter().zip(xb).map(|(a, b)| a * b).sum();
            out.set(b, o, 0, dot + bias[o]);
        }
    }
    out
}

fn linear_backward(x: &Tensor3, grad: &Tensor3, weight: &[f64], dweight: &mut [f64], dbias: &mut [f64]) -> Tensor3 {
    let s = x.shape();
    let inf = s.channels * s.len;
    let outf = grad.shape().channels;
    let mut dx = Tensor3::zeros(s);
    for b in 0..s.batch {
        let xb = &x.data()[b * inf..(b + 1) * inf];
        for o in 0..outf {
            let g = grad.get(b, o, 0);
            dbias[o] += g;
            let w = &weight[o * inf..(o + 1) * inf];
            let dw = &mut dweight[o * inf..(o + 1) * inf];
            for (d, xv) in dw.iter_mut().zip(xb) {
                *d += g * xv;
            }
            let dxb = &mut dx.data_mut()[b * inf..(b + 1) * inf];
            for (d, wv) in dxb.iter_mut().zip(w) {
                *d += g * wv;
            }
        }
    }
    dx
}

/// An ordered stack of layers treated as one differentiable fragment.
#[derive(Clone, Debug, Default)]
pub struct Sequential {
    layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    pub fn from_specs(prefix: &str, specs: &[LayerSpec], rng: &mut KernelRng) -> Self {
        let layers = specs
            .iter()
            .enumerate()
            .map(|(i, s)| Layer::new(format!("{prefix}.{i}"), s.clone(), rng))
            .collect();
        Self { layers }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn push(&mut self, layer: Layer) {
        self.layers.push(layer);
    }

    pub fn forward(&mut self, x: &Tensor3, mode: Mode, rng: &mut KernelRng) -> Result<Tensor3, KernelError> {
        let mut h = x.clone();
        for layer in &mut self.layers {
            h = layer.forward(&h, mode, rng)?;
        }
        Ok(h)
    }

    pub fn infer(&self, x: &Tensor3) -> Result<Tensor3, KernelError> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.infer(&h)?;
        }
        Ok(h)
    }

    pub fn backward(&mut self, grad: &Tensor3) -> Result<Tensor3, KernelError> {
        if self.layers.iter().any(|l| !l.has_recorded_forward()) {
            let missing = self.layers.iter().find(|l| !l.has_recorded_forward()).map(|l| l.name.clone());
            return Err(KernelError::NoRecordedForward {
                layer: missing.unwrap_or_default(),
            });
        }
        let mut g = grad.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    pub fn params(&self) -> impl Iterator<Item = &Parameter> {
        self.layers.iter().flat_map(|l| l.params.iter())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.layers.iter_mut().flat_map(|l| l.params.iter_mut())
    }

    pub fn output_shape(&self, input: Shape3) -> Result<Shape3, KernelError> {
        self.layers.iter().try_fold(input, |s, l| l.spec.output_shape(s))
    }
}

/// `conv(k=3,s=1,p=1) -> batchnorm -> relu|identity`.
pub fn conv_block(in_channels: usize, out_channels: usize, relu: bool) -> Vec<LayerSpec> {
    vec![
        LayerSpec::conv3(in_channels, out_channels),
        LayerSpec::Batchnorm1d {
            channels: out_channels,
        },
        if relu { LayerSpec::Relu } else { LayerSpec::Identity },
    ]
}

/// `deconv(k=3,s=1,p=1) -> batchnorm -> relu|identity`.
pub fn deconv_block(in_channels: usize, out_channels: usize, relu: bool) -> Vec<LayerSpec> {
    vec![
        LayerSpec::deconv3(in_channels, out_channels),
        LayerSpec::Batchnorm1d {
            channels: out_channels,
        },
        if relu { LayerSpec::Relu } else { LayerSpec::Identity },
    ]
}
