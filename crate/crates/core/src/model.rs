//! Compact trajectory forecaster: an encoder with sequential and interaction
//! branches, a direct-offset decoder, and the two embedding heads used by the
//! contrastive objective.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{build_key_bundles, AugmentConfig, KeyBundle};
use crate::error::{Error, Result};
use crate::heads::{embed_key_traced, embed_query_traced, KeyHead, QueryHead};
use crate::loss::{snce_loss, snce_loss_split, NceConfig};
use crate::nn::{adam_step, mean_pool, mean_pool_backward, Activation, AdamConfig, AdamState, Mlp, ParamGrad, Trace};
use crate::scene::{AgentState, Sample};

/// Per-neighbor interaction features: relative position and relative one-frame displacement.
pub const INTERACTION_INPUT_DIM: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Width of every hidden layer and of the encoder output.
    pub hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { hidden: 64 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub sequential: Mlp,
    pub interaction: Mlp,
    pub fusion: Mlp,
    obs_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoder {
    pub net: Mlp,
    pred_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub query: QueryHead,
    pub key: KeyHead,
}

pub const NET_NAMES: [&str; 6] = ["sequential", "interaction", "fusion", "decoder", "query", "key"];

pub(crate) struct EncoderTrace {
    sequential: Trace,
    neighbors: Vec<Trace>,
    fusion: Trace,
}

fn displacement(sample: &Sample, agent: usize, frame: usize) -> AgentState {
    let scene = sample.scene();
    match (
        frame.checked_sub(1).and_then(|f| scene.state(f, agent)),
        scene.state(frame, agent),
    ) {
        (Some(prev), Some(cur)) => cur.relative_to(&prev),
        _ => AgentState::ORIGIN,
    }
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(obs_len: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            sequential: Mlp::new("sequential", &[2 * obs_len, hidden, hidden], Activation::Relu, rng),
            interaction: Mlp::new(
                "interaction",
                &[INTERACTION_INPUT_DIM, hidden, hidden],
                Activation::Relu,
                rng,
            ),
            fusion: Mlp::new("fusion", &[2 * hidden, hidden, hidden], Activation::Identity, rng),
            obs_len,
        }
    }

    pub fn from_parts(sequential: Mlp, interaction: Mlp, fusion: Mlp, obs_len: usize) -> Result<Self> {
        let check = |context, expected: usize, actual: usize| {
            if expected == actual {
                Ok(())
            } else {
                Err(Error::DimensionMismatch {
                    context,
                    expected,
                    actual,
                })
            }
        };
        check("sequential input", 2 * obs_len, sequential.input_dim())?;
        check("interaction input", INTERACTION_INPUT_DIM, interaction.input_dim())?;
        check(
            "fusion input",
            sequential.output_dim() + interaction.output_dim(),
            fusion.input_dim(),
        )?;
        Ok(Self {
            sequential,
            interaction,
            fusion,
            obs_len,
        })
    }

    pub fn obs_len(&self) -> usize {
        self.obs_len
    }

    pub fn output_dim(&self) -> usize {
        self.fusion.output_dim()
    }

    /// Primary agent's observed track relative to its last observed position.
    fn sequential_input(sample: &Sample) -> Vec<f64> {
        let anchor = sample.anchor();
        sample
            .observed()
            .iter()
            .flat_map(|s| {
                let r = s.relative_to(&anchor);
                [r.x, r.y]
            })
            .collect()
    }

    fn interaction_inputs(sample: &Sample) -> Vec<[f64; INTERACTION_INPUT_DIM]> {
        let t = sample.current_frame();
        let anchor = sample.anchor();
        let own = displacement(sample, sample.primary(), t);
        sample
            .neighbors_at(sample.obs_len() - 1)
            .into_iter()
            .map(|(j, s)| {
                let rel = s.relative_to(&anchor);
                let d = displacement(sample, j, t).relative_to(&own);
                [rel.x, rel.y, d.x, d.y]
            })
            .collect()
    }

    fn check_sample(&self, sample: &Sample) -> Result<()> {
        if sample.obs_len() != self.obs_len {
            return Err(Error::DimensionMismatch {
                context: "sample obs_len",
                expected: self.obs_len,
                actual: sample.obs_len(),
            });
        }
        Ok(())
    }

    pub(crate) fn encode_traced(&self, sample: &Sample) -> Result<(Vec<f64>, EncoderTrace)> {
        self.check_sample(sample)?;
        let (seq_out, sequential) = self.sequential.forward(&Self::sequential_input(sample))?;
        let mut outs = Vec::new();
        let mut neighbors = Vec::new();
        for x in Self::interaction_inputs(sample) {
            let (o, tr) = self.interaction.forward(&x)?;
            outs.push(o);
            neighbors.push(tr);
        }
        let pooled = mean_pool(&outs, self.interaction.output_dim());
        let mut fused_in = seq_out;
        fused_in.extend_from_slice(&pooled);
        let (h, fusion) = self.fusion.forward(&fused_in)?;
        Ok((
            h,
            EncoderTrace {
                sequential,
                neighbors,
                fusion,
            },
        ))
    }

    /// Hidden vector for the sample's primary agent at its last observed frame.
    pub fn encode(&self, sample: &Sample) -> Result<Vec<f64>> {
        self.check_sample(sample)?;
        let seq_out = self.sequential.apply(&Self::sequential_input(sample))?;
        let outs = Self::interaction_inputs(sample)
            .iter()
            .map(|x| self.interaction.apply(x))
            .collect::<Result<Vec<_>>>()?;
        let mut fused_in = seq_out;
        fused_in.extend(mean_pool(&outs, self.interaction.output_dim()));
        self.fusion.apply(&fused_in)
    }

    fn backward(&self, trace: &EncoderTrace, dh: &[f64], grad: &mut ModelGrad) -> Result<()> {
        let d_fused = self.fusion.backward_into(&trace.fusion, dh, &mut grad.fusion)?;
        let split = self.sequential.output_dim();
        self.sequential
            .backward_into(&trace.sequential, &d_fused[..split], &mut grad.sequential)?;
        if !trace.neighbors.is_empty() {
            let d_each = mean_pool_backward(&d_fused[split..], trace.neighbors.len());
            for tr in &trace.neighbors {
                self.interaction.backward_into(tr, &d_each, &mut grad.interaction)?;
            }
        }
        Ok(())
    }
}

/// Hidden vector for `sample` under `encoder`.
pub fn encode(sample: &Sample, encoder: &Encoder) -> Result<Vec<f64>> {
    encoder.encode(sample)
}

impl Decoder {
    pub fn new<R: Rng + ?Sized>(hidden: usize, pred_len: usize, rng: &mut R) -> Self {
        Self {
            net: Mlp::new("decoder", &[hidden, hidden, 2 * pred_len], Activation::Identity, rng),
            pred_len,
        }
    }

    pub fn from_mlp(net: Mlp, pred_len: usize) -> Result<Self> {
        if net.output_dim() != 2 * pred_len {
            return Err(Error::DimensionMismatch {
                context: "decoder output",
                expected: 2 * pred_len,
                actual: net.output_dim(),
            });
        }
        Ok(Self { net, pred_len })
    }

    pub fn pred_len(&self) -> usize {
        self.pred_len
    }
}

fn offsets_to_positions(offsets: &[f64], anchor: AgentState) -> Vec<AgentState> {
    offsets.chunks_exact(2).map(|o| anchor.offset(o[0], o[1])).collect()
}

/// World-frame prediction: `anchor` plus each emitted offset (direct, not cumulative).
pub fn decode(h: &[f64], decoder: &Decoder, anchor: AgentState) -> Result<Vec<AgentState>> {
    Ok(offsets_to_positions(&decoder.net.apply(h)?, anchor))
}

/// Mean squared Euclidean error over the predicted steps.
pub fn task_loss(predicted: &[AgentState], truth: &[AgentState]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: predicted.len(),
            right: truth.len(),
        });
    }
    if predicted.is_empty() {
        return Err(Error::Empty("trajectory"));
    }
    let sum: f64 = predicted
        .iter()
        .zip(truth)
        .map(|(p, t)| {
            let d = p.relative_to(t);
            d.x * d.x + d.y * d.y
        })
        .sum();
    Ok(sum / predicted.len() as f64)
}

/// Gradients for every network of a [`Model`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrad {
    pub sequential: ParamGrad,
    pub interaction: ParamGrad,
    pub fusion: ParamGrad,
    pub decoder: ParamGrad,
    pub query: ParamGrad,
    pub key: ParamGrad,
}

impl ModelGrad {
    pub fn zeros_like(model: &Model) -> Self {
        Self {
            sequential: ParamGrad::zeros_like(&model.encoder.sequential),
            interaction: ParamGrad::zeros_like(&model.encoder.interaction),
            fusion: ParamGrad::zeros_like(&model.encoder.fusion),
            decoder: ParamGrad::zeros_like(&model.decoder.net),
            query: ParamGrad::zeros_like(model.query.mlp()),
            key: ParamGrad::zeros_like(model.key.mlp()),
        }
    }

    pub fn parts(&self) -> [&ParamGrad; 6] {
        [
            &self.sequential,
            &self.interaction,
            &self.fusion,
            &self.decoder,
            &self.query,
            &self.key,
        ]
    }

    fn parts_mut(&mut self) -> [&mut ParamGrad; 6] {
        [
            &mut self.sequential,
            &mut self.interaction,
            &mut self.fusion,
            &mut self.decoder,
            &mut self.query,
            &mut self.key,
        ]
    }

    pub fn add_assign(&mut self, other: &ModelGrad) {
        for (a, b) in self.parts_mut().into_iter().zip(other.parts()) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in self.parts_mut() {
            a.scale(s);
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.parts().iter().flat_map(|g| g.flatten()).collect()
    }
}

impl Model {
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, obs_len: usize, pred_len: usize, rng: &mut R) -> Self {
        let h = cfg.hidden;
        Self {
            encoder: Encoder::new(obs_len, h, rng),
            decoder: Decoder::new(h, pred_len, rng),
            query: QueryHead::new(h, h, rng),
            key: KeyHead::new(h, rng),
        }
    }

    pub fn obs_len(&self) -> usize {
        self.encoder.obs_len
    }

    pub fn pred_len(&self) -> usize {
        self.decoder.pred_len
    }

    pub fn nets(&self) -> [&Mlp; 6] {
        [
            &self.encoder.sequential,
            &self.encoder.interaction,
            &self.encoder.fusion,
            &self.decoder.net,
            self.query.mlp(),
            self.key.mlp(),
        ]
    }

    pub fn nets_mut(&mut self) -> [&mut Mlp; 6] {
        [
            &mut self.encoder.sequential,
            &mut self.encoder.interaction,
            &mut self.encoder.fusion,
            &mut self.decoder.net,
            self.query.mlp_mut(),
            self.key.mlp_mut(),
        ]
    }

    pub fn n_params(&self) -> usize {
        self.nets().iter().map(|n| n.n_params()).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.nets().iter().flat_map(|n| n.flat_params()).collect()
    }

    pub fn set_flat_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.n_params() {
            return Err(Error::DimensionMismatch {
                context: "model parameters",
                expected: self.n_params(),
                actual: values.len(),
            });
        }
        let mut k = 0;
        for net in self.nets_mut() {
            let n = net.n_params();
            net.set_flat_params(&values[k..k + n])?;
            k += n;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.nets().iter().all(|n| n.all_finite())
    }

    fn check_sample(&self, sample: &Sample) -> Result<()> {
        if sample.pred_len() != self.pred_len() {
            return Err(Error::DimensionMismatch {
                context: "sample pred_len",
                expected: self.pred_len(),
                actual: sample.pred_len(),
            });
        }
        Ok(())
    }

    pub fn predict(&self, sample: &Sample) -> Result<Vec<AgentState>> {
        self.check_sample(sample)?;
        let h = self.encoder.encode(sample)?;
        decode(&h, &self.decoder, sample.anchor())
    }
}

/// Relative weights of the two loss branches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub task: f64,
    pub contrastive: f64,
}

/// Loss values for one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValues {
    pub task: f64,
    pub nce: f64,
    pub combined: f64,
}

#[derive(Debug, Clone)]
pub struct LossBreakdown {
    pub task: f64,
    pub nce: f64,
    pub combined: f64,
    pub grad: ModelGrad,
}

/// `weights.task * task + weights.contrastive * nce` and its gradient for
/// fixed key bundles. A branch with zero weight contributes exactly zero
/// gradient; its loss value is still reported.
pub fn loss_and_grad(
    model: &Model,
    sample: &Sample,
    bundles: &[KeyBundle],
    nce: &NceConfig,
    weights: LossWeights,
) -> Result<LossBreakdown> {
    loss_and_grad_split(model, sample, bundles, nce, weights, nce.temperature)
}

/// As [`loss_and_grad`], adding the gradient into `grad`.
pub fn accumulate_loss_and_grad(
    model: &Model,
    sample: &Sample,
    bundles: &[KeyBundle],
    nce: &NceConfig,
    weights: LossWeights,
    grad: &mut ModelGrad,
) -> Result<LossValues> {
    accumulate_split(model, sample, bundles, nce, weights, nce.temperature, grad)
}

pub(crate) fn loss_and_grad_split(
    model: &Model,
    sample: &Sample,
    bundles: &[KeyBundle],
    nce: &NceConfig,
    weights: LossWeights,
    backward_tau: f64,
) -> Result<LossBreakdown> {
    let mut grad = ModelGrad::zeros_like(model);
    let v = accumulate_split(model, sample, bundles, nce, weights, backward_tau, &mut grad)?;
    Ok(LossBreakdown {
        task: v.task,
        nce: v.nce,
        combined: v.combined,
        grad,
    })
}

fn accumulate_split(
    model: &Model,
    sample: &Sample,
    bundles: &[KeyBundle],
    nce: &NceConfig,
    weights: LossWeights,
    backward_tau: f64,
    grad: &mut ModelGrad,
) -> Result<LossValues> {
    model.check_sample(sample)?;
    let anchor = sample.anchor();
    let (h, enc_trace) = model.encoder.encode_traced(sample)?;
    let mut dh = vec![0.0; h.len()];

    let (offsets, dec_trace) = model.decoder.net.forward(&h)?;
    let predicted = offsets_to_positions(&offsets, anchor);
    let truth = sample.future();
    let task = task_loss(&predicted, &truth)?;
    if weights.task != 0.0 {
        let scale = 2.0 * weights.task / truth.len() as f64;
        let upstream: Vec<f64> = predicted
            .iter()
            .zip(&truth)
            .flat_map(|(p, t)| [scale * (p.x - t.x), scale * (p.y - t.y)])
            .collect();
        let d = model
            .decoder
            .net
            .backward_into(&dec_trace, &upstream, &mut grad.decoder)?;
        dh.iter_mut().zip(&d).for_each(|(a, b)| *a += b);
    }

    let (q, q_trace) = embed_query_traced(&model.query, &h)?;
    let out = snce_loss_split(&q, bundles, &model.key, anchor, nce, backward_tau)?;
    if weights.contrastive != 0.0 && out.active_bundles > 0 {
        let lam = weights.contrastive;
        grad.key.add_scaled(&out.grad_key_head, lam);
        let up: Vec<f64> = out.grad_query.iter().map(|g| lam * g).collect();
        let d = model.query.mlp().backward_into(&q_trace, &up, &mut grad.query)?;
        dh.iter_mut().zip(&d).for_each(|(a, b)| *a += b);
    }

    model.encoder.backward(&enc_trace, &dh, grad)?;
    Ok(LossValues {
        task,
        nce: out.loss,
        combined: weights.task * task + weights.contrastive * out.loss,
    })
}

/// Combined loss value plus a fingerprint of every ReLU on/off pattern in
/// the graph, for finite-difference probing.
pub fn loss_with_pattern(
    model: &Model,
    sample: &Sample,
    bundles: &[KeyBundle],
    nce: &NceConfig,
    weights: LossWeights,
) -> Result<(f64, u64)> {
    model.check_sample(sample)?;
    let mut pattern: u64 = 0xcbf2_9ce4_8422_2325;
    let mut mix = |p: u64| pattern = (pattern ^ p).wrapping_mul(0x0100_0000_01b3);
    let enc = &model.encoder;
    let (h, tr) = enc.encode_traced(sample)?;
    mix(tr.sequential.activation_pattern(&enc.sequential));
    for n in &tr.neighbors {
        mix(n.activation_pattern(&enc.interaction));
    }
    mix(tr.fusion.activation_pattern(&enc.fusion));
    let (offsets, dec) = model.decoder.net.forward(&h)?;
    mix(dec.activation_pattern(&model.decoder.net));
    let (q, qt) = embed_query_traced(&model.query, &h)?;
    mix(qt.activation_pattern(model.query.mlp()));
    let anchor = sample.anchor();
    for b in bundles {
        for &loc in std::iter::once(&b.positive).chain(&b.negatives) {
            let (_, kt) = embed_key_traced(&model.key, loc, anchor, b.horizon_offset, nce.horizon)?;
            mix(kt.activation_pattern(model.key.mlp()));
        }
    }
    let task = task_loss(&offsets_to_positions(&offsets, anchor), &sample.future())?;
    let out = snce_loss(&q, bundles, &model.key, anchor, nce)?;
    Ok((weights.task * task + weights.contrastive * out.loss, pattern))
}

/// Task loss plus `contrastive_weight` times the social contrastive loss, with
/// key bundles drawn from `rng`.
pub fn combined_loss<R: Rng + ?Sized>(
    sample: &Sample,
    model: &Model,
    nce: &NceConfig,
    aug: &AugmentConfig,
    rng: &mut R,
) -> Result<LossBreakdown> {
    let bundles = build_key_bundles(sample, nce.horizon, aug, rng)?;
    loss_and_grad(
        model,
        sample,
        &bundles,
        nce,
        LossWeights {
            task: 1.0,
            contrastive: nce.contrastive_weight,
        },
    )
}

/// Adam state for every network of a [`Model`].
#[derive(Debug, Clone)]
pub struct ModelOptimizer {
    states: Vec<AdamState>,
}

impl ModelOptimizer {
    pub fn new(model: &Model, cfg: AdamConfig) -> Self {
        Self {
            states: model.nets().iter().map(|n| AdamState::new(n, cfg)).collect(),
        }
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        for st in &mut self.states {
            st.config.lr = lr;
        }
    }

    pub fn step(&mut self, model: &mut Model, grad: &ModelGrad) -> Result<()> {
        // validate everything first so a failure leaves the model untouched
        for (net, g) in model.nets().iter().zip(grad.parts()) {
            for (k, l) in g.layers.iter().enumerate() {
                if !l.weights.iter().chain(&l.bias).all(|v| v.is_finite()) {
                    return Err(Error::NonFiniteGradient {
                        net: net.name().to_string(),
                        layer: k,
                    });
                }
            }
        }
        for ((net, g), st) in model.nets_mut().into_iter().zip(grad.parts()).zip(&mut self.states) {
            adam_step(net, g, st)?;
        }
        Ok(())
    }
}
