//! Temperature-scaled contrastive cross-entropy over one positive and many
//! negative keys, with exact gradients into the query and every key.

use serde::{Deserialize, Serialize};

use crate::augment::KeyBundle;
use crate::error::{Error, Result};
use crate::heads::{embed_key_traced, KeyHead, EMBED_DIM};
use crate::nn::{dot, ParamGrad, Trace};
use crate::scene::AgentState;

/// How per-offset terms share a softmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DenominatorMode {
    /// Mean of independent terms, one softmax per horizon offset.
    #[default]
    PerHorizon,
    /// One softmax over every positive and negative across all offsets;
    /// each offset's positive contributes one numerator.
    Joint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NceConfig {
    pub temperature: f64,
    pub horizon: usize,
    pub contrastive_weight: f64,
    pub denominator_mode: DenominatorMode,
}

impl Default for NceConfig {
    fn default() -> Self {
        Self {
            temperature: 0.1,
            horizon: 4,
            contrastive_weight: 2.0,
            denominator_mode: DenominatorMode::PerHorizon,
        }
    }
}

impl NceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidConfig("sampling horizon must be at least 1".into()));
        }
        if !(self.contrastive_weight.is_finite() && self.contrastive_weight >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "contrastive weight must be non-negative, got {}",
                self.contrastive_weight
            )));
        }
        Ok(())
    }
}

/// One softmax cross-entropy term.
#[derive(Debug, Clone, PartialEq)]
pub struct NceTerm {
    pub loss: f64,
    pub grad_query: Vec<f64>,
    /// Gradient per key, in input order (positive first for [`infonce`]).
    pub grad_keys: Vec<Vec<f64>>,
    /// Softmax probability of every key.
    pub probabilities: Vec<f64>,
    /// Mean softmax probability assigned to the positives.
    pub positive_probability: f64,
}

/// Numerically stable `log(sum(exp(logits)))`.
pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|l| (l - lse).exp()).collect()
}

/// `LSE(logits) - mean(logits[positives])` with gradients, over arbitrary keys.
pub fn contrastive_term(q: &[f64], keys: &[&[f64]], positives: &[usize], tau: f64) -> Result<NceTerm> {
    assert!(!positives.is_empty(), "at least one positive key is required");
    let logits: Vec<f64> = keys.iter().map(|k| dot(q, k) / tau).collect();
    if let Some(index) = logits.iter().position(|l| !l.is_finite()) {
        return Err(Error::NonFiniteLogit { index });
    }
    let lse = log_sum_exp(&logits);
    let n_pos = positives.len() as f64;
    let pos_mean = positives.iter().map(|&i| logits[i]).sum::<f64>() / n_pos;
    let loss = lse - pos_mean;
    let probabilities: Vec<f64> = logits.iter().map(|l| (l - lse).exp()).collect();

    // dL/dlogit_n = p_n - [n positive] / n_pos
    let mut coeff = probabilities.clone();
    for &i in positives {
        coeff[i] -= 1.0 / n_pos;
    }
    let mut grad_query = vec![0.0; q.len()];
    for (c, k) in coeff.iter().zip(keys) {
        for (g, kv) in grad_query.iter_mut().zip(k.iter()) {
            *g += c * kv / tau;
        }
    }
    let grad_keys = coeff
        .iter()
        .map(|c| q.iter().map(|qv| c * qv / tau).collect())
        .collect();
    let positive_probability = positives.iter().map(|&i| probabilities[i]).sum::<f64>() / n_pos;
    Ok(NceTerm {
        loss,
        grad_query,
        grad_keys,
        probabilities,
        positive_probability,
    })
}

/// InfoNCE with the positive included in the denominator.
pub fn infonce(q: &[f64], positive: &[f64], negatives: &[Vec<f64>], tau: f64) -> Result<NceTerm> {
    let mut keys: Vec<&[f64]> = Vec::with_capacity(negatives.len() + 1);
    keys.push(positive);
    keys.extend(negatives.iter().map(Vec::as_slice));
    contrastive_term(q, &keys, &[0], tau)
}

/// Social contrastive loss for one sample.
#[derive(Debug, Clone)]
pub struct SnceOutput {
    pub loss: f64,
    pub grad_query: Vec<f64>,
    pub grad_key_head: ParamGrad,
    /// Number of bundles that contributed (non-empty negatives).
    pub active_bundles: usize,
    /// Per-offset losses (per-horizon mode) in bundle order; empty bundles are absent.
    pub per_offset: Vec<(usize, f64)>,
}

struct EmbeddedKey {
    embedding: Vec<f64>,
    trace: Trace,
}

fn embed_bundle(head: &KeyHead, bundle: &KeyBundle, origin: AgentState, horizon: usize) -> Result<Vec<EmbeddedKey>> {
    std::iter::once(&bundle.positive)
        .chain(&bundle.negatives)
        .map(|&loc| {
            let (embedding, trace) = embed_key_traced(head, loc, origin, bundle.horizon_offset, horizon)?;
            Ok(EmbeddedKey { embedding, trace })
        })
        .collect()
}

/// Contrastive loss of query `q` against key bundles for offsets `1..=horizon`.
///
/// Key locations are embedded relative to `origin`. Returns zero loss and
/// zero gradients when every bundle has empty negatives.
pub fn snce_loss(
    q: &[f64],
    bundles: &[KeyBundle],
    key_head: &KeyHead,
    origin: AgentState,
    cfg: &NceConfig,
) -> Result<SnceOutput> {
    snce_loss_split(q, bundles, key_head, origin, cfg, cfg.temperature)
}

/// As [`snce_loss`], but gradients are computed with `backward_tau`. Used to
/// verify that the finite-difference oracle catches forward/backward drift.
pub(crate) fn snce_loss_split(
    q: &[f64],
    bundles: &[KeyBundle],
    key_head: &KeyHead,
    origin: AgentState,
    cfg: &NceConfig,
    backward_tau: f64,
) -> Result<SnceOutput> {
    let offsets: Vec<usize> = bundles.iter().map(|b| b.horizon_offset).collect();
    if offsets.len() != cfg.horizon || offsets.iter().enumerate().any(|(i, &o)| o != i + 1) {
        return Err(Error::BundleMismatch {
            horizon: cfg.horizon,
            found: offsets,
        });
    }
    if q.len() != EMBED_DIM {
        return Err(Error::DimensionMismatch {
            context: "query embedding",
            expected: EMBED_DIM,
            actual: q.len(),
        });
    }
    let mut grad_key_head = ParamGrad::zeros_like(key_head.mlp());
    let mut grad_query = vec![0.0; q.len()];
    let active: Vec<&KeyBundle> = bundles.iter().filter(|b| !b.negatives.is_empty()).collect();
    if active.is_empty() {
        return Ok(SnceOutput {
            loss: 0.0,
            grad_query,
            grad_key_head,
            active_bundles: 0,
            per_offset: Vec::new(),
        });
    }
    let tau = cfg.temperature;
    let mut per_offset = Vec::with_capacity(active.len());
    let loss = match cfg.denominator_mode {
        DenominatorMode::PerHorizon => {
            let weight = 1.0 / active.len() as f64;
            let mut total = 0.0;
            for b in &active {
                let keys = embed_bundle(key_head, b, origin, cfg.horizon)?;
                let refs: Vec<&[f64]> = keys.iter().map(|k| k.embedding.as_slice()).collect();
                let term = contrastive_term(q, &refs, &[0], backward_tau)?;
                let value = if backward_tau == tau {
                    term.loss
                } else {
                    contrastive_term(q, &refs, &[0], tau)?.loss
                };
                total += value;
                per_offset.push((b.horizon_offset, value));
                for (g, t) in grad_query.iter_mut().zip(&term.grad_query) {
                    *g += weight * t;
                }
                for (k, gk) in keys.iter().zip(&term.grad_keys) {
                    let up: Vec<f64> = gk.iter().map(|v| weight * v).collect();
                    key_head.mlp().backward_into(&k.trace, &up, &mut grad_key_head)?;
                }
            }
            total * weight
        }
        DenominatorMode::Joint => {
            let mut keys = Vec::new();
            let mut positives = Vec::with_capacity(active.len());
            for b in &active {
                positives.push(keys.len());
                keys.extend(embed_bundle(key_head, b, origin, cfg.horizon)?);
            }
            let refs: Vec<&[f64]> = keys.iter().map(|k| k.embedding.as_slice()).collect();
            let term = contrastive_term(q, &refs, &positives, backward_tau)?;
            let value = if backward_tau == tau {
                term.loss
            } else {
                contrastive_term(q, &refs, &positives, tau)?.loss
            };
            grad_query.copy_from_slice(&term.grad_query);
            for (k, gk) in keys.iter().zip(&term.grad_keys) {
                key_head.mlp().backward_into(&k.trace, gk, &mut grad_key_head)?;
            }
            value
        }
    };
    Ok(SnceOutput {
        loss,
        grad_query,
        grad_key_head,
        active_bundles: active.len(),
        per_offset,
    })
}
