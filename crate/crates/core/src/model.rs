//! Fully-connected classifier with hand-written backpropagation, heavy-ball
//! SGD and the constant-then-cosine learning-rate schedule.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NpnError, Result};

/// One affine layer: `out = input · weights + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `fan_in × fan_out`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Dense {
            weights: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weights.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.ncols()
    }
}

/// ReLU on hidden layers, identity on the output layer.
#[derive(Debug, Clone)]
pub struct MlpNetwork {
    layers: Vec<Dense>,
    /// Bumped on every parameter update; forward caches remember it.
    version: u64,
}

/// Equal parameters; the update counter is not part of a network's value.
impl PartialEq for MlpNetwork {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

impl MlpNetwork {
    /// Glorot-uniform weights and zero biases, drawn from `seed`.
    pub fn new(layer_dims: &[usize], seed: u64) -> Result<Self> {
        validate_dims(layer_dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = layer_dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weights =
                    Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-limit..=limit));
                Dense {
                    weights,
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(MlpNetwork { layers, version: 0 })
    }

    pub fn zeros(layer_dims: &[usize]) -> Result<Self> {
        validate_dims(layer_dims)?;
        let layers = layer_dims
            .windows(2)
            .map(|w| Dense::zeros(w[0], w[1]))
            .collect();
        Ok(MlpNetwork { layers, version: 0 })
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(NpnError::param("layers", "network needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(NpnError::dim("layer chaining", pair[0].fan_out(), pair[1].fan_in()));
            }
        }
        for l in &layers {
            if l.bias.len() != l.fan_out() {
                return Err(NpnError::dim("layer bias", l.fan_out(), l.bias.len()));
            }
        }
        Ok(MlpNetwork { layers, version: 0 })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(Dense::fan_out));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn classes(&self) -> usize {
        self.layers.last().map(Dense::fan_out).unwrap_or(0)
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Logits only, no cache.
    pub fn predict(&self, inputs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_width(inputs)?;
        let last = self.layers.len() - 1;
        let mut act = inputs.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            act = affine(act.view(), layer);
            if i < last {
                act.mapv_inplace(relu);
            }
        }
        Ok(act)
    }

    pub fn forward(&self, inputs: ArrayView2<'_, f64>) -> Result<ForwardCache> {
        self.check_width(inputs)?;
        let last = self.layers.len() - 1;
        let mut layer_inputs = Vec::with_capacity(self.layers.len());
        let mut act = inputs.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = affine(act.view(), layer);
            if i < last {
                out.mapv_inplace(relu);
            }
            layer_inputs.push(act);
            act = out;
        }
        Ok(ForwardCache {
            layer_inputs,
            logits: act,
            version: self.version,
        })
    }

    pub fn backward(&self, cache: &ForwardCache, grad_logits: ArrayView2<'_, f64>) -> Result<Gradients> {
        if cache.version != self.version || cache.layer_inputs.len() != self.layers.len() {
            return Err(NpnError::InvalidState(
                "forward cache does not belong to the current parameters".into(),
            ));
        }
        if grad_logits.dim() != cache.logits.dim() {
            return Err(NpnError::dim(
                "logit gradient",
                cache.logits.len(),
                grad_logits.len(),
            ));
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut delta = grad_logits.to_owned();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.layer_inputs[i];
            let weights = input.t().dot(&delta);
            let bias = delta.sum_axis(Axis(0));
            if i > 0 {
                // The input to layer i is the ReLU output of layer i-1; its
                // derivative is 1 exactly where that output is positive.
                let mut upstream = delta.dot(&layer.weights.t());
                upstream.zip_mut_with(input, |g, &a| {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                });
                delta = upstream;
            }
            layers.push(Dense { weights, bias });
        }
        layers.reverse();
        Ok(Gradients { layers })
    }

    fn check_width(&self, inputs: ArrayView2<'_, f64>) -> Result<()> {
        if inputs.ncols() != self.input_dim() {
            return Err(NpnError::dim("network input width", self.input_dim(), inputs.ncols()));
        }
        Ok(())
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Dense] {
        self.version += 1;
        &mut self.layers
    }
}

fn validate_dims(layer_dims: &[usize]) -> Result<()> {
    if layer_dims.len() < 2 {
        return Err(NpnError::param("layer_dims", "need at least input and output widths"));
    }
    if layer_dims.contains(&0) {
        return Err(NpnError::param("layer_dims", "widths must be positive"));
    }
    if *layer_dims.last().unwrap() < 2 {
        return Err(NpnError::param("layer_dims", "need at least 2 output classes"));
    }
    Ok(())
}

fn affine(input: ArrayView2<'_, f64>, layer: &Dense) -> Array2<f64> {
    let mut out = input.dot(&layer.weights);
    out += &layer.bias;
    out
}

fn relu(v: f64) -> f64 {
    v.max(0.0)
}

/// Activations retained by [`MlpNetwork::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    layer_inputs: Vec<Array2<f64>>,
    logits: Array2<f64>,
    version: u64,
}

impl ForwardCache {
    pub fn logits(&self) -> &Array2<f64> {
        &self.logits
    }
}

/// Per-layer parameter gradients, shaped like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn zeros_like(net: &MlpNetwork) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| Dense::zeros(l.fan_in(), l.fan_out()))
                .collect(),
        }
    }

    fn matches(&self, layers: &[Dense]) -> bool {
        self.layers.len() == layers.len()
            && self.layers.iter().zip(layers).all(|(g, l)| {
                g.weights.dim() == l.weights.dim() && g.bias.len() == l.bias.len()
            })
    }
}

/// Momentum buffers and step counter for heavy-ball SGD.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub momentum: f64,
    pub velocity: Vec<Dense>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(net: &MlpNetwork, momentum: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(NpnError::param("momentum", "must lie in [0, 1)"));
        }
        Ok(OptimizerState {
            momentum,
            velocity: Gradients::zeros_like(net).layers,
            step: 0,
        })
    }
}

/// `v <- mu v + g; theta <- theta - lr v`.
pub fn sgd_step(
    net: &mut MlpNetwork,
    grads: &Gradients,
    opt: &mut OptimizerState,
    lr: f64,
) -> Result<()> {
    if !grads.matches(&net.layers) || !grads.matches(&opt.velocity) {
        return Err(NpnError::InvalidState(
            "gradient, velocity and parameter shapes disagree".into(),
        ));
    }
    let mu = opt.momentum;
    for ((layer, vel), grad) in net.layers_mut().iter_mut().zip(&mut opt.velocity).zip(&grads.layers) {
        vel.weights.zip_mut_with(&grad.weights, |v, &g| *v = mu * *v + g);
        vel.bias.zip_mut_with(&grad.bias, |v, &g| *v = mu * *v + g);
        layer.weights.scaled_add(-lr, &vel.weights);
        layer.bias.scaled_add(-lr, &vel.bias);
    }
    opt.step += 1;
    Ok(())
}

/// Constant warm-up rate followed by cosine decay to zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    pub warmup_lr: f64,
    pub robust_base_lr: f64,
}

impl LrSchedule {
    /// Rate for 0-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> Result<f64> {
        if epoch >= self.total_epochs {
            return Err(NpnError::param(
                "epoch",
                format!("{epoch} outside [0, {})", self.total_epochs),
            ));
        }
        if epoch < self.warmup_epochs {
            return Ok(self.warmup_lr);
        }
        let progress =
            (epoch - self.warmup_epochs) as f64 / (self.total_epochs - self.warmup_epochs) as f64;
        Ok(self.robust_base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
    }
}

pub fn lr_at(schedule: &LrSchedule, epoch: usize) -> Result<f64> {
    schedule.lr_at(epoch)
}
