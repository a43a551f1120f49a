//! Fully connected networks with hand-written backpropagation.
//!
//! An [`Mlp`] is a stack of dense layers: `hidden_layers` hidden layers of
//! `hidden_width` units with a shared activation, followed by a linear output
//! layer and an output head (softmax or identity). Gradients are the batch
//! mean of per-sample gradients; the optimizer is plain SGD.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error("input has length {got}, network expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("training batch is empty")]
    EmptyBatch,
    #[error("loss is not finite at sample {sample} (loss = {loss})")]
    NonFiniteLoss { sample: usize, loss: f64 },
    #[error("{loss} loss needs a softmax output head")]
    HeadMismatch { loss: &'static str },
    #[error("invalid target at sample {sample}: {reason}")]
    InvalidTarget { sample: usize, reason: String },
    #[error("networks have different architectures")]
    ConfigMismatch,
    #[error("averaging weights must be nonnegative with a positive sum")]
    InvalidWeights,
    #[error("parameter buffer has {got} bytes, expected {expected}")]
    BufferLength { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            // Same value as `tanh` to within an ulp or so, and much cheaper
            // than libm's f32 tanh. Saturates cleanly when exp overflows.
            Activation::Tanh => {
                let two = T::lit(2.0);
                T::one() - two / ((x + x).exp() + T::one())
            }
            Activation::Relu => x.max(T::zero()),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative_from_output<T: Scalar>(self, a: T) -> T {
        match self {
            Activation::Tanh => T::one() - a * a,
            Activation::Relu => {
                if a > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OutputHead {
    Softmax,
    Linear,
}

/// Architecture of an MLP. `hidden_width` is the number of units in each
/// hidden layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub output_dim: usize,
    pub head: OutputHead,
    pub activation: Activation,
}

impl MlpConfig {
    /// Cart-pole policy network: 4 inputs, softmax over two actions.
    pub fn policy(hidden_layers: usize, hidden_width: usize) -> Self {
        Self {
            input_dim: 4,
            hidden_layers,
            hidden_width,
            output_dim: 2,
            head: OutputHead::Softmax,
            activation: Activation::Tanh,
        }
    }

    /// Cart-pole value network: 4 inputs, one linear output.
    pub fn value(hidden_layers: usize, hidden_width: usize) -> Self {
        Self { output_dim: 1, head: OutputHead::Linear, ..Self::policy(hidden_layers, hidden_width) }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(NnError::InvalidConfig("input and output dims must be >= 1".into()));
        }
        if self.hidden_width == 0 {
            return Err(NnError::InvalidConfig("hidden width must be >= 1".into()));
        }
        Ok(())
    }

    /// `(in, out)` of every dense layer, input side first.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_layers + 1);
        let mut fan_in = self.input_dim;
        for _ in 0..self.hidden_layers {
            dims.push((fan_in, self.hidden_width));
            fan_in = self.hidden_width;
        }
        dims.push((fan_in, self.output_dim));
        dims
    }

    /// Number of trainable scalars, weights plus biases.
    pub fn weight_count(&self) -> usize {
        self.layer_dims().iter().map(|&(i, o)| i * o + o).sum()
    }
}

/// Dense layer, `weights` row-major with shape `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense<T> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<T>,
    pub biases: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![T::zero(); in_dim * out_dim],
            biases: vec![T::zero(); out_dim],
        }
    }

    #[inline]
    fn affine(&self, input: &[T], out: &mut [T]) {
        for (o, (row, b)) in out.iter_mut().zip(self.weights.chunks_exact(self.in_dim).zip(&self.biases)) {
            *o = *b + dot(row, input);
        }
    }

    fn params(&self) -> impl Iterator<Item = &T> {
        self.weights.iter().chain(self.biases.iter())
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.weights.iter_mut().chain(self.biases.iter_mut())
    }
}

/// Training target for one sample. Each variant fixes the loss:
///
/// * `SoftTarget(t)`: cross-entropy `-sum_i t_i ln p_i` against a distribution.
/// * `Regression(t)`: squared error `sum_i (y_i - t_i)^2`.
/// * `PolicyGradient`: `-advantage * ln p_action`.
#[derive(Debug, Clone, PartialEq)]
pub enum Target<T> {
    SoftTarget(Vec<T>),
    Regression(Vec<T>),
    PolicyGradient { action: usize, advantage: T },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub input: Vec<T>,
    pub target: Target<T>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainBatch<T> {
    pub samples: Vec<Sample<T>>,
}

impl<T> TrainBatch<T> {
    pub fn new() -> Self {
        Self { samples: Vec::new() }
    }

    pub fn push(&mut self, input: Vec<T>, target: Target<T>) {
        self.samples.push(Sample { input, target });
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Per-layer outputs of the most recent forward pass. `layers[0]` is the
/// input; `layers[k]` is the post-activation output of dense layer `k - 1`
/// (pre-head logits for the last one). `output` is the head output.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache<T> {
    layers: Vec<Vec<T>>,
    output: Vec<T>,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn output(&self) -> &[T] {
        &self.output
    }

    pub fn logits(&self) -> &[T] {
        self.layers.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Gradient with the same shape as the network it was taken from.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<Dense<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros(config: &MlpConfig) -> Self {
        Self { layers: config.layer_dims().into_iter().map(|(i, o)| Dense::zeros(i, o)).collect() }
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.layers.iter().flat_map(Dense::params)
    }

    pub fn scale(&mut self, factor: T) {
        self.layers.iter_mut().flat_map(Dense::params_mut).for_each(|g| *g *= factor);
    }

    pub fn is_zero(&self) -> bool {
        self.iter().all(|g| g.is_zero())
    }

    pub fn l2_norm(&self) -> T {
        self.iter().map(|g| *g * *g).sum::<T>().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Backward<T> {
    pub gradients: Gradients<T>,
    /// Mean loss over the batch at the current parameters.
    pub loss: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp<T> {
    config: MlpConfig,
    layers: Vec<Dense<T>>,
}

impl<T: Scalar> Mlp<T> {
    /// Glorot-uniform weights, zero biases, deterministic per seed.
    pub fn init(config: MlpConfig, seed: u64) -> Result<Self, NnError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = config
            .layer_dims()
            .into_iter()
            .map(|(i, o)| {
                let limit = (6.0 / (i + o) as f64).sqrt();
                let mut layer = Dense::zeros(i, o);
                for w in &mut layer.weights {
                    *w = T::lit(rng.random_range(-limit..limit));
                }
                layer
            })
            .collect();
        Ok(Self { config, layers })
    }

    /// Network with every parameter set to zero.
    pub fn zeros(config: MlpConfig) -> Result<Self, NnError> {
        config.validate()?;
        Ok(Self { config, layers: Gradients::zeros(&config).layers })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Dense<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense<T>] {
        &mut self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// Parameters in wire order: per layer from the input side, weights
    /// (row-major) then biases.
    pub fn parameters(&self) -> impl Iterator<Item = &T> {
        self.layers.iter().flat_map(Dense::params)
    }

    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.layers.iter_mut().flat_map(Dense::params_mut)
    }

    pub fn is_finite(&self) -> bool {
        self.parameters().all(|p| p.is_finite())
    }

    pub fn forward_into(&self, input: &[T], cache: &mut ForwardCache<T>) -> Result<(), NnError> {
        if input.len() != self.config.input_dim {
            return Err(NnError::DimensionMismatch { expected: self.config.input_dim, got: input.len() });
        }
        let n = self.layers.len();
        cache.layers.resize_with(n + 1, Vec::new);
        cache.layers[0].clear();
        cache.layers[0].extend_from_slice(input);
        for (k, layer) in self.layers.iter().enumerate() {
            let (prev, rest) = cache.layers.split_at_mut(k + 1);
            let out = &mut rest[0];
            out.resize(layer.out_dim, T::zero());
            layer.affine(&prev[k], out);
            if k + 1 < n {
                out.iter_mut().for_each(|v| *v = self.config.activation.apply(*v));
            }
        }
        let logits = &cache.layers[n];
        cache.output.clear();
        match self.config.head {
            OutputHead::Linear => cache.output.extend_from_slice(logits),
            OutputHead::Softmax => {
                let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
                cache.output.extend(logits.iter().map(|&z| (z - max).exp()));
                let sum: T = cache.output.iter().copied().sum();
                cache.output.iter_mut().for_each(|p| *p /= sum);
            }
        }
        Ok(())
    }

    pub fn forward(&self, input: &[T]) -> Result<Vec<T>, NnError> {
        let mut cache = ForwardCache::default();
        self.forward_into(input, &mut cache)?;
        Ok(cache.output)
    }

    /// Mean loss over `batch`.
    pub fn loss(&self, batch: &TrainBatch<T>) -> Result<T, NnError> {
        if batch.is_empty() {
            return Err(NnError::EmptyBatch);
        }
        let mut cache = ForwardCache::default();
        let mut total = T::zero();
        for (i, s) in batch.samples.iter().enumerate() {
            self.forward_into(&s.input, &mut cache)?;
            total += self.sample_loss(i, &s.target, &cache)?;
        }
        Ok(total / T::from_count(batch.len()))
    }

    fn sample_loss(&self, sample: usize, target: &Target<T>, cache: &ForwardCache<T>) -> Result<T, NnError> {
        let out = cache.output();
        let loss = match target {
            Target::Regression(t) => {
                self.check_target_len(sample, t.len())?;
                out.iter().zip(t).map(|(y, t)| (*y - *t) * (*y - *t)).sum()
            }
            Target::SoftTarget(t) => {
                self.require_softmax("cross-entropy")?;
                self.check_target_len(sample, t.len())?;
                let log_probs = log_softmax(cache.logits());
                -t.iter().zip(&log_probs).map(|(t, lp)| *t * *lp).sum::<T>()
            }
            Target::PolicyGradient { action, advantage } => {
                self.require_softmax("policy-gradient")?;
                if *action >= self.config.output_dim {
                    return Err(NnError::InvalidTarget { sample, reason: format!("action {action} out of range") });
                }
                -*advantage * log_softmax(cache.logits())[*action]
            }
        };
        if !loss.is_finite() {
            return Err(NnError::NonFiniteLoss { sample, loss: loss.as_f64() });
        }
        Ok(loss)
    }

    fn require_softmax(&self, loss: &'static str) -> Result<(), NnError> {
        match self.config.head {
            OutputHead::Softmax => Ok(()),
            OutputHead::Linear => Err(NnError::HeadMismatch { loss }),
        }
    }

    fn check_target_len(&self, sample: usize, len: usize) -> Result<(), NnError> {
        if len != self.config.output_dim {
            return Err(NnError::InvalidTarget {
                sample,
                reason: format!("target has {len} components, output has {}", self.config.output_dim),
            });
        }
        Ok(())
    }

    fn validate_batch(&self, batch: &TrainBatch<T>) -> Result<(), NnError> {
        if batch.is_empty() {
            return Err(NnError::EmptyBatch);
        }
        let tol = T::lit(1e-5);
        for (i, s) in batch.samples.iter().enumerate() {
            if let Target::SoftTarget(t) = &s.target {
                let sum: T = t.iter().copied().sum();
                if (sum - T::one()).abs() > tol || t.iter().any(|p| *p < T::zero()) {
                    return Err(NnError::InvalidTarget { sample: i, reason: format!("not a distribution (sum {sum})") });
                }
            }
        }
        Ok(())
    }

    /// Mean gradient of the batch loss.
    pub fn backward(&self, batch: &TrainBatch<T>) -> Result<Backward<T>, NnError> {
        self.validate_batch(batch)?;
        let mut grads = Gradients::zeros(&self.config);
        let mut cache = ForwardCache::default();
        let max_width = self.layers.iter().map(|l| l.out_dim.max(l.in_dim)).max().unwrap_or(0);
        let mut delta = Vec::with_capacity(max_width);
        let mut prev_delta = Vec::with_capacity(max_width);
        let mut total = T::zero();

        for (i, s) in batch.samples.iter().enumerate() {
            self.forward_into(&s.input, &mut cache)?;
            total += self.sample_loss(i, &s.target, &cache)?;
            self.output_delta(&s.target, &cache, &mut delta);

            for k in (0..self.layers.len()).rev() {
                let layer = &self.layers[k];
                let input = &cache.layers[k];
                let g = &mut grads.layers[k];
                for (o, d) in delta.iter().enumerate() {
                    g.biases[o] += *d;
                    let row = &mut g.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (gw, x) in row.iter_mut().zip(input) {
                        *gw += *d * *x;
                    }
                }
                if k > 0 {
                    prev_delta.clear();
                    prev_delta.resize(layer.in_dim, T::zero());
                    for (o, d) in delta.iter().enumerate() {
                        let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                        for (pd, w) in prev_delta.iter_mut().zip(row) {
                            *pd += *d * *w;
                        }
                    }
                    for (pd, a) in prev_delta.iter_mut().zip(input) {
                        *pd *= self.config.activation.derivative_from_output(*a);
                    }
                    std::mem::swap(&mut delta, &mut prev_delta);
                }
            }
        }
        let inv = T::one() / T::from_count(batch.len());
        grads.scale(inv);
        Ok(Backward { gradients: grads, loss: total * inv })
    }

    /// dLoss/dlogits for one sample.
    fn output_delta(&self, target: &Target<T>, cache: &ForwardCache<T>, delta: &mut Vec<T>) {
        let p = cache.output();
        delta.clear();
        match target {
            Target::SoftTarget(t) => {
                let mass: T = t.iter().copied().sum();
                delta.extend(p.iter().zip(t).map(|(p, t)| *p * mass - *t));
            }
            Target::PolicyGradient { action, advantage } => {
                delta.extend(p.iter().enumerate().map(|(j, p)| {
                    let indicator = if j == *action { T::one() } else { T::zero() };
                    *advantage * (*p - indicator)
                }));
            }
            Target::Regression(t) => {
                let two = T::lit(2.0);
                delta.extend(p.iter().zip(t).map(|(y, t)| two * (*y - *t)));
                if self.config.head == OutputHead::Softmax {
                    // Softmax Jacobian: dz_j = p_j (dy_j - sum_i dy_i p_i)
                    let dot: T = delta.iter().zip(p).map(|(d, p)| *d * *p).sum();
                    delta.iter_mut().zip(p).for_each(|(d, p)| *d = *p * (*d - dot));
                }
            }
        }
    }

    /// SGD step: `theta -= learning_rate * gradient`.
    pub fn apply_update(&mut self, gradients: &Gradients<T>, learning_rate: T) -> Result<(), NnError> {
        if gradients.layers.len() != self.layers.len()
            || gradients
                .layers
                .iter()
                .zip(&self.layers)
                .any(|(g, l)| g.in_dim != l.in_dim || g.out_dim != l.out_dim)
        {
            return Err(NnError::ConfigMismatch);
        }
        for (p, g) in self.parameters_mut().zip(gradients.iter()) {
            *p -= learning_rate * *g;
        }
        Ok(())
    }

    /// Little-endian `f32` parameters in wire order.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 * self.parameter_count());
        for p in self.parameters() {
            out.extend_from_slice(&p.as_f32().to_le_bytes());
        }
        out
    }

    pub fn from_le_bytes(config: MlpConfig, bytes: &[u8]) -> Result<Self, NnError> {
        let mut model = Self::zeros(config)?;
        let expected = 4 * model.parameter_count();
        if bytes.len() != expected {
            return Err(NnError::BufferLength { expected, got: bytes.len() });
        }
        for (p, chunk) in model.parameters_mut().zip(bytes.chunks_exact(4)) {
            let v = f32::from_le_bytes(chunk.try_into().expect("chunk of 4"));
            *p = T::lit(v as f64);
        }
        Ok(model)
    }
}

/// Parameter-wise weighted mean of identically shaped networks.
pub fn average_models<T: Scalar>(models: &[&Mlp<T>], weights: &[T]) -> Result<Mlp<T>, NnError> {
    let first = models.first().ok_or(NnError::InvalidWeights)?;
    if weights.len() != models.len() || weights.iter().any(|w| *w < T::zero() || !w.is_finite()) {
        return Err(NnError::InvalidWeights);
    }
    let total: T = weights.iter().copied().sum();
    if total <= T::zero() {
        return Err(NnError::InvalidWeights);
    }
    if models.iter().any(|m| m.config != first.config) {
        return Err(NnError::ConfigMismatch);
    }
    let mut out = Mlp::zeros(first.config)?;
    for (m, w) in models.iter().zip(weights) {
        let share = *w / total;
        for (acc, p) in out.parameters_mut().zip(m.parameters()) {
            *acc += share * *p;
        }
    }
    Ok(out)
}

/// Dot product with eight independent accumulators so the loop vectorizes.
#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    const LANES: usize = 8;
    let mut acc = [T::zero(); LANES];
    let (a_body, a_tail) = a.split_at(a.len() - a.len() % LANES);
    let b_body = &b[..a_body.len()];
    for (ca, cb) in a_body.chunks_exact(LANES).zip(b_body.chunks_exact(LANES)) {
        for l in 0..LANES {
            acc[l] += ca[l] * cb[l];
        }
    }
    let mut sum = acc.iter().copied().sum::<T>();
    for (x, y) in a_tail.iter().zip(&b[a_body.len()..]) {
        sum += *x * *y;
    }
    sum
}

fn log_softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<T>().ln();
    logits.iter().map(|&z| z - lse).collect()
}
