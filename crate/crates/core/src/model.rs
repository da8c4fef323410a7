//! The recognition network: three spatiotemporal convolution blocks, two
//! bidirectional GRU layers, a linear projection and a softmax.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{
    relu, relu_backward, softmax, softmax_backward, BatchNorm, BatchNormCache, BatchStats, BiGru,
    BiGruCache, Conv3d, Dropout, GruCell, Linear, MaxPool3d, ZeroPad3d,
};
use crate::scalar::{lit, Scalar};
use crate::tensor::Tensor;

/// Architecture hyperparameters. Defaults give the full-size network on
/// 75-frame 64x64 clips with a 28-symbol output layer.
///
/// Each convolution block is zero padding, convolution (with its own extra
/// padding), batch norm, ReLU, dropout and 1x2x2 max pooling. The explicit
/// and in-convolution paddings add up to (2,3,3), (2,2,2) and (1,1,1).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub in_channels: usize,
    pub conv_channels: Vec<usize>,
    pub conv_kernels: Vec<[usize; 3]>,
    pub zero_pads: Vec<[usize; 3]>,
    pub conv_pads: Vec<[usize; 3]>,
    pub conv_strides: Vec<[usize; 3]>,
    pub pool_window: [usize; 3],
    pub gru_hidden: usize,
    pub gru_layers: usize,
    pub vocab_size: usize,
    pub dropout: f64,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            frames: 75,
            height: 64,
            width: 64,
            in_channels: 1,
            conv_channels: vec![32, 64, 96],
            conv_kernels: vec![[5, 7, 7], [5, 5, 5], [3, 3, 3]],
            zero_pads: vec![[1, 2, 2], [0, 2, 2], [0, 1, 1]],
            conv_pads: vec![[1, 1, 1], [2, 0, 0], [1, 0, 0]],
            conv_strides: vec![[1, 2, 2], [1, 1, 1], [1, 1, 1]],
            pool_window: [1, 2, 2],
            gru_hidden: 256,
            gru_layers: 2,
            vocab_size: 28,
            dropout: 0.5,
            bn_momentum: 0.9,
            bn_epsilon: 1e-5,
        }
    }
}

impl ModelConfig {
    /// Desk-scale network used by the test-suite: 8 frames of 16x16,
    /// channels [4, 8, 8], GRU width 16, five outputs.
    pub fn tiny() -> Self {
        ModelConfig {
            frames: 8,
            height: 16,
            width: 16,
            conv_channels: vec![4, 8, 8],
            gru_hidden: 16,
            vocab_size: 5,
            ..ModelConfig::default()
        }
    }

    pub fn input_shape(&self) -> [usize; 4] {
        [self.frames, self.height, self.width, self.in_channels]
    }

    pub fn validate(&self) -> Result<()> {
        let blocks = self.conv_channels.len();
        if blocks == 0 {
            return Err(Error::InvalidArgument("at least one convolution block is required".into()));
        }
        for (name, len) in [
            ("conv_kernels", self.conv_kernels.len()),
            ("zero_pads", self.zero_pads.len()),
            ("conv_pads", self.conv_pads.len()),
            ("conv_strides", self.conv_strides.len()),
        ] {
            if len != blocks {
                return Err(Error::InvalidArgument(format!(
                    "{name} has {len} entries but conv_channels has {blocks}"
                )));
            }
        }
        if self.vocab_size < 2 {
            return Err(Error::InvalidArgument("vocab_size must be >= 2 (one label plus blank)".into()));
        }
        if self.gru_layers == 0 || self.gru_hidden == 0 {
            return Err(Error::InvalidArgument("gru_layers and gru_hidden must be positive".into()));
        }
        if [self.frames, self.height, self.width, self.in_channels].contains(&0) {
            return Err(Error::InvalidArgument("input extents must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        if self.bn_epsilon <= 0.0 {
            return Err(Error::InvalidArgument("bn_epsilon must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer<S> {
    ZeroPad(ZeroPad3d),
    Conv(Conv3d<S>),
    BatchNorm(BatchNorm<S>),
    Relu,
    Dropout(Dropout),
    MaxPool(MaxPool3d),
    BiGru(BiGru<S>),
    Linear(Linear<S>),
    Softmax,
}

impl<S: Scalar> Layer<S> {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::ZeroPad(_) => "ZeroPadding3D",
            Layer::Conv(_) => "Conv3D",
            Layer::BatchNorm(_) => "BatchNorm",
            Layer::Relu => "Activation",
            Layer::Dropout(_) => "Dropout",
            Layer::MaxPool(_) => "MaxPool3D",
            Layer::BiGru(_) => "Bi-GRU",
            Layer::Linear(_) => "Linear",
            Layer::Softmax => "Softmax",
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::ZeroPad(p) => p.output_shape(input),
            Layer::Conv(c) => c.output_shape(input),
            Layer::BatchNorm(b) => match input.last() {
                Some(&c) if c == b.channels() => Ok(input.to_vec()),
                _ => Err(Error::Shape(format!("batchnorm has {} channels, input {input:?}", b.channels()))),
            },
            Layer::Relu | Layer::Dropout(_) | Layer::Softmax => Ok(input.to_vec()),
            Layer::MaxPool(p) => p.output_shape(input),
            Layer::BiGru(g) => g.output_shape(input),
            Layer::Linear(l) => l.output_shape(input),
        }
    }

    fn params(&self) -> Vec<&Tensor<S>> {
        match self {
            Layer::Conv(c) => vec![&c.weight, &c.bias],
            Layer::BatchNorm(b) => vec![&b.gamma, &b.beta],
            Layer::BiGru(g) => vec![&g.fwd.w, &g.fwd.u, &g.fwd.b, &g.bwd.w, &g.bwd.u, &g.bwd.b],
            Layer::Linear(l) => vec![&l.weight, &l.bias],
            _ => vec![],
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<S>> {
        match self {
            Layer::Conv(c) => vec![&mut c.weight, &mut c.bias],
            Layer::BatchNorm(b) => vec![&mut b.gamma, &mut b.beta],
            Layer::BiGru(g) => vec![
                &mut g.fwd.w,
                &mut g.fwd.u,
                &mut g.fwd.b,
                &mut g.bwd.w,
                &mut g.bwd.u,
                &mut g.bwd.b,
            ],
            Layer::Linear(l) => vec![&mut l.weight, &mut l.bias],
            _ => vec![],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Activations recorded by a forward pass, consumed by [`Model::backward`].
#[derive(Clone, Debug)]
pub struct Tape<S> {
    entries: Vec<TapeEntry<S>>,
    input_shape: Vec<usize>,
    /// Softmax output of the forward pass.
    pub probs: Tensor<S>,
}

#[derive(Clone, Debug)]
enum TapeEntry<S> {
    Shape(Vec<usize>),
    Input(Tensor<S>),
    BatchNorm(BatchNormCache<S>),
    Mask(Vec<S>),
    Argmax(Vec<usize>, Vec<usize>),
    BiGru(Tensor<S>, BiGruCache<S>),
    Softmax,
}

/// Parameter gradients in [`Model::params`] order.
pub type Gradients<S> = Vec<Tensor<S>>;

#[derive(Clone, Debug, PartialEq)]
pub struct Model<S> {
    pub config: ModelConfig,
    pub layers: Vec<Layer<S>>,
}

fn normal_tensor<S: Scalar, R: Rng>(shape: &[usize], std: f64, rng: &mut R) -> Tensor<S> {
    let dist = Normal::new(0.0, std).expect("finite std");
    Tensor::from_fn(shape, |_| S::from_f64_lossy(dist.sample(rng)))
}

impl<S: Scalar> Model<S> {
    /// Builds the network with deterministic initialization.
    ///
    /// Convolution weights are drawn from N(0, 2/fan_in); GRU and linear
    /// weights from N(0, 1/fan_in); biases are zero; batch norm starts at
    /// gamma = 1, beta = 0.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut in_c = config.in_channels;
        for b in 0..config.conv_channels.len() {
            let out_c = config.conv_channels[b];
            let [kt, kh, kw] = config.conv_kernels[b];
            let fan_in = in_c * kt * kh * kw;
            let weight = normal_tensor(&[out_c, in_c, kt, kh, kw], (2.0 / fan_in as f64).sqrt(), &mut rng);
            layers.push(Layer::ZeroPad(ZeroPad3d { pads: config.zero_pads[b] }));
            layers.push(Layer::Conv(Conv3d::new(
                weight,
                Tensor::zeros(&[out_c]),
                config.conv_pads[b],
                config.conv_strides[b],
            )?));
            layers.push(Layer::BatchNorm(BatchNorm::new(
                out_c,
                lit(config.bn_momentum),
                lit(config.bn_epsilon),
            )?));
            layers.push(Layer::Relu);
            layers.push(Layer::Dropout(Dropout::new(config.dropout)?));
            layers.push(Layer::MaxPool(MaxPool3d { window: config.pool_window }));
            in_c = out_c;
        }
        // Feature width after the convolution stack.
        let mut shape = config.input_shape().to_vec();
        for (i, layer) in layers.iter().enumerate() {
            shape = layer
                .output_shape(&shape)
                .map_err(|e| Error::Shape(format!("layer {} ({}): {e}", i + 1, layer.name())))?;
        }
        let mut features: usize = shape[1..].iter().product();
        let hd = config.gru_hidden;
        for _ in 0..config.gru_layers {
            let cell = |rng: &mut ChaCha8Rng| {
                GruCell::new(
                    normal_tensor(&[3 * hd, features], (1.0 / features as f64).sqrt(), rng),
                    normal_tensor(&[3 * hd, hd], (1.0 / hd as f64).sqrt(), rng),
                    Tensor::zeros(&[3 * hd]),
                )
            };
            let fwd = cell(&mut rng)?;
            let bwd = cell(&mut rng)?;
            layers.push(Layer::BiGru(BiGru::new(fwd, bwd)?));
            features = 2 * hd;
        }
        layers.push(Layer::Linear(Linear::new(
            normal_tensor(&[config.vocab_size, features], (1.0 / features as f64).sqrt(), &mut rng),
            Tensor::zeros(&[config.vocab_size]),
        )?));
        layers.push(Layer::Softmax);
        let model = Model {
            config: config.clone(),
            layers,
        };
        model.layer_shapes()?;
        Ok(model)
    }

    /// `(layer name, output shape)` for every layer, starting with the input.
    pub fn layer_shapes(&self) -> Result<Vec<(&'static str, Vec<usize>)>> {
        // Shapes are chained on a batch of one and reported without it.
        let mut shape = vec![1];
        shape.extend_from_slice(&self.config.input_shape());
        let mut rows = vec![("InputLayer", shape[1..].to_vec())];
        for (i, layer) in self.layers.iter().enumerate() {
            shape = layer
                .output_shape(&shape)
                .map_err(|e| Error::Shape(format!("layer {} ({}): {e}", i + 1, layer.name())))?;
            rows.push((layer.name(), shape[1..].to_vec()));
        }
        Ok(rows)
    }

    pub fn params(&self) -> Vec<&Tensor<S>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<S>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn batchnorms(&self) -> impl Iterator<Item = &BatchNorm<S>> {
        self.layers.iter().filter_map(|l| match l {
            Layer::BatchNorm(b) => Some(b),
            _ => None,
        })
    }

    pub fn batchnorms_mut(&mut self) -> impl Iterator<Item = &mut BatchNorm<S>> {
        self.layers.iter_mut().filter_map(|l| match l {
            Layer::BatchNorm(b) => Some(b),
            _ => None,
        })
    }

    fn check_input(&self, input: &Tensor<S>) -> Result<()> {
        let expect = self.config.input_shape();
        let s = input.shape();
        let tail = match s.len() {
            4 => s,
            5 => &s[1..],
            _ => return Err(Error::Shape(format!("model input must be [T,H,W,C] or [N,T,H,W,C], got {s:?}"))),
        };
        if tail != expect {
            return Err(Error::Shape(format!(
                "model expects clips of shape {expect:?} (frames, height, width, channels), got {s:?}"
            )));
        }
        Ok(())
    }

    /// Shared forward pass. Batch statistics from train-mode batch norm
    /// layers are returned rather than applied.
    #[allow(clippy::type_complexity)]
    fn run<R: Rng + ?Sized>(
        &self,
        input: &Tensor<S>,
        mode: Mode,
        mut rng: Option<&mut R>,
        record: bool,
    ) -> Result<(Tensor<S>, Vec<TapeEntry<S>>, Vec<BatchStats<S>>)> {
        self.check_input(input)?;
        let unbatched = input.rank() == 4;
        let mut x = if unbatched {
            let mut s = vec![1];
            s.extend_from_slice(input.shape());
            input.clone().reshape(&s)?
        } else {
            input.clone()
        };
        let mut tape = Vec::new();
        let mut stats = Vec::new();
        for layer in &self.layers {
            let (y, entry) = match layer {
                Layer::ZeroPad(p) => (p.forward(&x)?, TapeEntry::Shape(x.shape().to_vec())),
                Layer::Conv(c) => (c.forward(&x)?, TapeEntry::Input(x)),
                Layer::BatchNorm(b) => {
                    let (y, cache) = match mode {
                        Mode::Train => {
                            let (y, cache, s) = b.forward_batch(&x)?;
                            stats.push(s);
                            (y, cache)
                        }
                        Mode::Eval => b.forward_eval(&x)?,
                    };
                    (y, TapeEntry::BatchNorm(cache))
                }
                Layer::Relu => (relu(&x), TapeEntry::Input(x)),
                Layer::Dropout(d) => match (mode, rng.as_deref_mut()) {
                    (Mode::Train, Some(r)) => {
                        let (y, mask) = d.forward_train(&x, r);
                        (y, TapeEntry::Mask(mask))
                    }
                    (Mode::Train, None) => {
                        return Err(Error::InvalidArgument("train-mode forward needs an RNG".into()))
                    }
                    (Mode::Eval, _) => {
                        let n = x.len();
                        (x, TapeEntry::Mask(vec![S::one(); if record { n } else { 0 }]))
                    }
                },
                Layer::MaxPool(p) => {
                    let (y, arg) = p.forward(&x)?;
                    (y, TapeEntry::Argmax(x.shape().to_vec(), arg))
                }
                Layer::BiGru(g) => {
                    let (y, cache) = g.forward(&x)?;
                    (y, TapeEntry::BiGru(x, cache))
                }
                Layer::Linear(l) => (l.forward(&x)?, TapeEntry::Input(x)),
                Layer::Softmax => (softmax(&x), TapeEntry::Softmax),
            };
            if record {
                tape.push(entry);
            }
            x = y;
        }
        if unbatched {
            let s = x.shape()[1..].to_vec();
            x = x.reshape(&s)?;
        }
        Ok((x, tape, stats))
    }

    /// Eval-mode posteriors: `[T, V]` for one clip or `[N, T, V]` for a batch.
    pub fn infer(&self, input: &Tensor<S>) -> Result<Tensor<S>> {
        self.run::<ChaCha8Rng>(input, Mode::Eval, None, false).map(|(y, _, _)| y)
    }

    /// Train-mode forward (batch statistics, dropout) that records a tape
    /// and folds batch statistics into the running statistics.
    pub fn forward_train<R: Rng + ?Sized>(&mut self, input: &Tensor<S>, rng: &mut R) -> Result<Tape<S>> {
        let (probs, entries, stats) = self.run(input, Mode::Train, Some(rng), true)?;
        for (bn, s) in self.batchnorms_mut().zip(&stats) {
            bn.update_running(s);
        }
        Ok(Tape {
            entries,
            input_shape: input.shape().to_vec(),
            probs,
        })
    }

    /// Eval-mode forward that records a tape, for input gradients.
    pub fn forward_eval_tape(&self, input: &Tensor<S>) -> Result<Tape<S>> {
        let (probs, entries, _) = self.run::<ChaCha8Rng>(input, Mode::Eval, None, true)?;
        Ok(Tape {
            entries,
            input_shape: input.shape().to_vec(),
            probs,
        })
    }

    /// Backpropagates `dL/dlogits` (the pre-softmax activations) through the
    /// network. Returns `dL/dinput` and the parameter gradients.
    pub fn backward_logits(&self, tape: &Tape<S>, grad_logits: &Tensor<S>) -> Result<(Tensor<S>, Gradients<S>)> {
        if tape.entries.len() != self.layers.len() {
            return Err(Error::MissingCache(format!(
                "tape has {} entries for {} layers",
                tape.entries.len(),
                self.layers.len()
            )));
        }
        let batched_shape = |s: &[usize]| -> Vec<usize> {
            if tape.input_shape.len() == 4 {
                let mut v = vec![1];
                v.extend_from_slice(s);
                v
            } else {
                s.to_vec()
            }
        };
        let mut g = grad_logits.clone().reshape(&batched_shape(grad_logits.shape()))?;
        let mut grads_rev: Vec<Vec<Tensor<S>>> = Vec::with_capacity(self.layers.len());
        for (layer, entry) in self.layers.iter().zip(&tape.entries).rev() {
            let mismatch = || Error::MissingCache(format!("no forward cache for {} layer", layer.name()));
            let (gin, pg): (Tensor<S>, Vec<Tensor<S>>) = match (layer, entry) {
                (Layer::Softmax, TapeEntry::Softmax) => (g, vec![]),
                (Layer::Linear(l), TapeEntry::Input(x)) => {
                    let r = l.backward(x, &g)?;
                    (r.input, vec![r.weight, r.bias])
                }
                (Layer::BiGru(b), TapeEntry::BiGru(x, cache)) => {
                    let r = b.backward(x, cache, &g)?;
                    (r.input, vec![r.fwd.w, r.fwd.u, r.fwd.b, r.bwd.w, r.bwd.u, r.bwd.b])
                }
                (Layer::MaxPool(_), TapeEntry::Argmax(shape, arg)) => (MaxPool3d::backward(shape, arg, &g)?, vec![]),
                (Layer::Dropout(_), TapeEntry::Mask(mask)) => (Dropout::backward(mask, &g)?, vec![]),
                (Layer::Relu, TapeEntry::Input(x)) => (relu_backward(x, &g)?, vec![]),
                (Layer::BatchNorm(b), TapeEntry::BatchNorm(cache)) => {
                    let r = b.backward(cache, &g)?;
                    (r.input, vec![r.gamma, r.beta])
                }
                (Layer::Conv(c), TapeEntry::Input(x)) => {
                    let r = c.backward(x, &g)?;
                    (r.input, vec![r.weight, r.bias])
                }
                (Layer::ZeroPad(p), TapeEntry::Shape(shape)) => (p.backward(shape, &g)?, vec![]),
                _ => return Err(mismatch()),
            };
            grads_rev.push(pg);
            g = gin;
        }
        let grads = grads_rev.into_iter().rev().flatten().collect();
        let g = g.reshape(&tape.input_shape)?;
        Ok((g, grads))
    }

    /// Same as [`Model::backward_logits`] but starting from `dL/dprobs`.
    pub fn backward_probs(&self, tape: &Tape<S>, grad_probs: &Tensor<S>) -> Result<(Tensor<S>, Gradients<S>)> {
        let gl = softmax_backward(&tape.probs, grad_probs)?;
        self.backward_logits(tape, &gl)
    }
}
