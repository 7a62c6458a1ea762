//! Dense multi-layer perceptrons with explicit forward traces and analytic gradients.
//!
//! All arithmetic is `f64`. Weights are stored row-major as `out_dim x in_dim`.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn fresh_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    in_dim: usize,
    out_dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
    activation: Activation,
}

impl Dense {
    pub fn new(
        in_dim: usize,
        out_dim: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if weights.len() != in_dim * out_dim {
            return Err(Error::DimensionMismatch {
                context: "dense weights",
                expected: in_dim * out_dim,
                actual: weights.len(),
            });
        }
        if bias.len() != out_dim {
            return Err(Error::DimensionMismatch {
                context: "dense bias",
                expected: out_dim,
                actual: bias.len(),
            });
        }
        Ok(Self {
            in_dim,
            out_dim,
            weights,
            bias,
            activation,
        })
    }

    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    /// Uniform fan-in scaled initialization, `U(-sqrt(6/in), sqrt(6/in))`, zero bias.
    pub fn he_uniform<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut R) -> Self {
        let bound = (6.0 / in_dim as f64).sqrt();
        let weights = (0..in_dim * out_dim).map(|_| rng.random_range(-bound..bound)).collect();
        Self {
            in_dim,
            out_dim,
            weights,
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn n_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn forward_into(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for (row, b) in self.weights.chunks_exact(self.in_dim).zip(&self.bias) {
            let z = b + dot(row, input);
            out.push(match self.activation {
                Activation::Relu => z.max(0.0),
                Activation::Identity => z,
            });
        }
    }
}

/// Activations recorded by [`Mlp::forward`]; sufficient for exact backprop.
#[derive(Debug, Clone)]
pub struct Trace {
    version: u64,
    /// `values[0]` is the input, `values[k + 1]` the output of layer `k`.
    values: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.values.last().expect("trace holds at least the input")
    }

    pub fn input(&self) -> &[f64] {
        &self.values[0]
    }

    /// Hash of the ReLU on/off pattern; changes when a unit crosses its kink.
    pub fn activation_pattern(&self, net: &Mlp) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (layer, out) in net.layers.iter().zip(&self.values[1..]) {
            if layer.activation == Activation::Relu {
                for &v in out {
                    h ^= (v > 0.0) as u64;
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }
}

/// Gradient of a scalar loss with respect to every parameter of an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub layers: Vec<DenseGrad>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ParamGrad {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| DenseGrad {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn congruent_with(&self, net: &Mlp) -> bool {
        self.layers.len() == net.layers.len()
            && self
                .layers
                .iter()
                .zip(&net.layers)
                .all(|(g, l)| g.weights.len() == l.weights.len() && g.bias.len() == l.bias.len())
    }

    pub fn add_assign(&mut self, other: &ParamGrad) {
        self.add_scaled(other, 1.0);
    }

    pub fn add_scaled(&mut self, other: &ParamGrad, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.iter_mut().zip(&b.weights).for_each(|(x, y)| *x += scale * y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += scale * y);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|x| *x *= s);
            l.bias.iter_mut().for_each(|x| *x *= s);
        }
    }

    /// Flattened in the same order as [`Mlp::flat_params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|&v| v == 0.0))
    }
}

/// A feed-forward perceptron. Consecutive layer dimensions always chain.
#[derive(Debug, Clone)]
pub struct Mlp {
    name: String,
    layers: Vec<Dense>,
    version: u64,
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.layers == other.layers
    }
}

impl Mlp {
    pub fn from_layers(name: impl Into<String>, layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Empty("layer list"));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::DimensionMismatch {
                    context: "layer chaining",
                    expected: pair[0].out_dim,
                    actual: pair[1].in_dim,
                });
            }
        }
        Ok(Self {
            name: name.into(),
            layers,
            version: fresh_version(),
        })
    }

    /// `dims = [in, h1, ..., out]`; ReLU on hidden layers, `output` on the last.
    pub fn new<R: Rng + ?Sized>(name: impl Into<String>, dims: &[usize], output: Activation, rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least input and output dims");
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|k| {
                let act = if k + 1 == n { output } else { Activation::Relu };
                Dense::he_uniform(dims[k], dims[k + 1], act, rng)
            })
            .collect();
        Self::from_layers(name, layers).expect("dims chain by construction")
    }

    pub fn zeros(name: impl Into<String>, dims: &[usize], output: Activation) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least input and output dims");
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|k| {
                let act = if k + 1 == n { output } else { Activation::Relu };
                Dense::zeros(dims[k], dims[k + 1], act)
            })
            .collect();
        Self::from_layers(name, layers).expect("dims chain by construction")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Dense::n_params).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_flat_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.n_params() {
            return Err(Error::DimensionMismatch {
                context: "flat parameters",
                expected: self.n_params(),
                actual: values.len(),
            });
        }
        let mut k = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&values[k..k + nw]);
            k += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&values[k..k + nb]);
            k += nb;
        }
        self.version = fresh_version();
        Ok(())
    }

    /// Mutable access to one layer's weights and bias.
    pub fn layer_params_mut(&mut self, k: usize) -> (&mut [f64], &mut [f64]) {
        self.version = fresh_version();
        let l = &mut self.layers[k];
        (&mut l.weights, &mut l.bias)
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "mlp input",
                expected: self.input_dim(),
                actual: input.len(),
            });
        }
        Ok(())
    }

    /// Output only, no trace.
    pub fn apply(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut cur = input.to_vec();
        let mut next = Vec::new();
        for l in &self.layers {
            l.forward_into(&cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, Trace)> {
        self.check_input(input)?;
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(input.to_vec());
        for l in &self.layers {
            let mut out = Vec::with_capacity(l.out_dim);
            l.forward_into(values.last().expect("non-empty"), &mut out);
            values.push(out);
        }
        let trace = Trace {
            version: self.version,
            values,
        };
        Ok((trace.output().to_vec(), trace))
    }

    /// Accumulate `d(upstream . output)/d(params)` into `grad`; returns the
    /// gradient with respect to the input.
    pub fn backward_into(&self, trace: &Trace, upstream: &[f64], grad: &mut ParamGrad) -> Result<Vec<f64>> {
        if trace.version != self.version || trace.values.len() != self.layers.len() + 1 {
            return Err(Error::StaleTrace {
                trace: trace.version,
                net: self.version,
            });
        }
        if upstream.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                context: "mlp upstream gradient",
                expected: self.output_dim(),
                actual: upstream.len(),
            });
        }
        if !grad.congruent_with(self) {
            return Err(Error::DimensionMismatch {
                context: "parameter gradient",
                expected: self.n_params(),
                actual: grad.flatten().len(),
            });
        }
        let mut delta = upstream.to_vec();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let input = &trace.values[k];
            let output = &trace.values[k + 1];
            if layer.activation == Activation::Relu {
                for (d, &o) in delta.iter_mut().zip(output) {
                    if o <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let g = &mut grad.layers[k];
            let mut d_input = vec![0.0; layer.in_dim];
            for (r, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g.bias[r] += d;
                let row = r * layer.in_dim;
                let w_row = &layer.weights[row..row + layer.in_dim];
                let gw_row = &mut g.weights[row..row + layer.in_dim];
                for (gw, &x) in gw_row.iter_mut().zip(input) {
                    *gw += d * x;
                }
                for (di, &w) in d_input.iter_mut().zip(w_row) {
                    *di += w * d;
                }
            }
            delta = d_input;
        }
        Ok(delta)
    }

    pub fn backward(&self, trace: &Trace, upstream: &[f64]) -> Result<(ParamGrad, Vec<f64>)> {
        let mut grad = ParamGrad::zeros_like(self);
        let d_input = self.backward_into(trace, upstream, &mut grad)?;
        Ok((grad, d_input))
    }
}

/// Forward pass returning the output and the trace needed by [`mlp_backward`].
pub fn mlp_forward(net: &Mlp, input: &[f64]) -> Result<(Vec<f64>, Trace)> {
    net.forward(input)
}

pub fn mlp_backward(net: &Mlp, trace: &Trace, upstream: &[f64]) -> Result<(ParamGrad, Vec<f64>)> {
    net.backward(trace, upstream)
}

/// Element-wise mean of equally sized vectors; zero vector of `dim` when empty.
pub fn mean_pool(items: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    if items.is_empty() {
        return out;
    }
    for v in items {
        out.iter_mut().zip(v).for_each(|(o, x)| *o += x);
    }
    let n = items.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

/// Gradient of [`mean_pool`] for one member: `upstream / n`.
pub fn mean_pool_backward(upstream: &[f64], n: usize) -> Vec<f64> {
    upstream.iter().map(|u| u / n as f64).collect()
}

/// Inner product with four independent accumulators.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    m: ParamGrad,
    v: ParamGrad,
}

impl AdamState {
    pub fn new(net: &Mlp, config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: ParamGrad::zeros_like(net),
            v: ParamGrad::zeros_like(net),
        }
    }

    pub fn first_moment(&self) -> &ParamGrad {
        &self.m
    }

    pub fn second_moment(&self) -> &ParamGrad {
        &self.v
    }
}

/// One bias-corrected Adam update. The network is left untouched on error.
pub fn adam_step(net: &mut Mlp, grads: &ParamGrad, state: &mut AdamState) -> Result<()> {
    if !grads.congruent_with(net) || !state.m.congruent_with(net) {
        return Err(Error::DimensionMismatch {
            context: "adam gradient",
            expected: net.n_params(),
            actual: grads.flatten().len(),
        });
    }
    for (k, g) in grads.layers.iter().enumerate() {
        if !g.weights.iter().chain(&g.bias).all(|v| v.is_finite()) {
            return Err(Error::NonFiniteGradient {
                net: net.name.clone(),
                layer: k,
            });
        }
    }
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    state.step += 1;
    let bc1 = 1.0 - beta1.powi(state.step as i32);
    let bc2 = 1.0 - beta2.powi(state.step as i32);
    let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
        for i in 0..p.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    };
    for (k, layer) in net.layers.iter_mut().enumerate() {
        let g = &grads.layers[k];
        let (m, v) = (&mut state.m.layers[k], &mut state.v.layers[k]);
        update(&mut layer.weights, &g.weights, &mut m.weights, &mut v.weights);
        update(&mut layer.bias, &g.bias, &mut m.bias, &mut v.bias);
    }
    net.version = fresh_version();
    Ok(())
}
