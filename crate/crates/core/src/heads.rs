//! Query projection and horizon-conditioned key encoder.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp, Trace};
use crate::scene::AgentState;

/// Dimension of query and key embeddings.
pub const EMBED_DIM: usize = 8;
/// Key head input: egocentric `(x, y)` plus `delta_t / horizon`.
pub const KEY_INPUT_DIM: usize = 3;

/// Projects an encoder hidden vector into the embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryHead {
    net: Mlp,
}

impl QueryHead {
    pub fn new<R: Rng + ?Sized>(in_dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            net: Mlp::new("query", &[in_dim, hidden, EMBED_DIM], Activation::Identity, rng),
        }
    }

    pub fn from_mlp(net: Mlp) -> Result<Self> {
        if net.output_dim() != EMBED_DIM {
            return Err(Error::DimensionMismatch {
                context: "query head output",
                expected: EMBED_DIM,
                actual: net.output_dim(),
            });
        }
        Ok(Self { net })
    }

    pub fn mlp(&self) -> &Mlp {
        &self.net
    }

    pub fn mlp_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }
}

/// Embeds a candidate future location at horizon offset `delta_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyHead {
    net: Mlp,
}

impl KeyHead {
    pub fn new<R: Rng + ?Sized>(hidden: usize, rng: &mut R) -> Self {
        Self {
            net: Mlp::new("key", &[KEY_INPUT_DIM, hidden, EMBED_DIM], Activation::Identity, rng),
        }
    }

    pub fn from_mlp(net: Mlp) -> Result<Self> {
        if net.input_dim() != KEY_INPUT_DIM {
            return Err(Error::DimensionMismatch {
                context: "key head input",
                expected: KEY_INPUT_DIM,
                actual: net.input_dim(),
            });
        }
        if net.output_dim() != EMBED_DIM {
            return Err(Error::DimensionMismatch {
                context: "key head output",
                expected: EMBED_DIM,
                actual: net.output_dim(),
            });
        }
        Ok(Self { net })
    }

    pub fn mlp(&self) -> &Mlp {
        &self.net
    }

    pub fn mlp_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }
}

pub fn embed_query(head: &QueryHead, h: &[f64]) -> Result<Vec<f64>> {
    head.net.apply(h)
}

pub(crate) fn embed_query_traced(head: &QueryHead, h: &[f64]) -> Result<(Vec<f64>, Trace)> {
    head.net.forward(h)
}

/// `(x - origin.x, y - origin.y, delta_t / horizon)`.
pub fn key_input(
    location: AgentState,
    origin: AgentState,
    delta_t: usize,
    horizon: usize,
) -> Result<[f64; KEY_INPUT_DIM]> {
    if delta_t == 0 || delta_t > horizon {
        return Err(Error::HorizonOffset { delta_t, horizon });
    }
    let rel = location.relative_to(&origin);
    Ok([rel.x, rel.y, delta_t as f64 / horizon as f64])
}

/// Key embedding of `location`, expressed relative to `origin` (the primary
/// agent's last observed position).
pub fn embed_key(
    head: &KeyHead,
    location: AgentState,
    origin: AgentState,
    delta_t: usize,
    horizon: usize,
) -> Result<Vec<f64>> {
    head.net.apply(&key_input(location, origin, delta_t, horizon)?)
}

pub(crate) fn embed_key_traced(
    head: &KeyHead,
    location: AgentState,
    origin: AgentState,
    delta_t: usize,
    horizon: usize,
) -> Result<(Vec<f64>, Trace)> {
    head.net.forward(&key_input(location, origin, delta_t, horizon)?)
}

/// Plain dot product; no normalization, no temperature.
pub fn similarity(q: &[f64], k: &[f64]) -> f64 {
    assert_eq!(q.len(), k.len(), "similarity needs equal-length vectors");
    q.iter().zip(k).map(|(a, b)| a * b).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn e(i: usize, scale: f64) -> Vec<f64> {
        let mut v = vec![0.0; EMBED_DIM];
        v[i] = scale;
        v
    }

    #[test]
    fn similarity_is_a_dot_product() {
        assert_eq!(similarity(&e(0, 1.0), &e(0, 1.0)), 1.0);
        assert_eq!(similarity(&e(0, 1.0), &e(3, 1.0)), 0.0);
        assert_eq!(similarity(&e(0, 2.0), &e(0, 3.0)), 6.0);
    }

    #[test]
    fn zero_heads_embed_to_zero() {
        let q = QueryHead::from_mlp(Mlp::zeros("q", &[16, 4, EMBED_DIM], Activation::Identity)).unwrap();
        assert_eq!(embed_query(&q, &[1.0; 16]).unwrap(), vec![0.0; EMBED_DIM]);
        let k = KeyHead::from_mlp(Mlp::zeros("k", &[3, 4, EMBED_DIM], Activation::Identity)).unwrap();
        let loc = AgentState::new(3.0, -2.0);
        assert_eq!(
            embed_key(&k, loc, AgentState::ORIGIN, 2, 4).unwrap(),
            vec![0.0; EMBED_DIM]
        );
    }

    #[test]
    fn time_feature_endpoint() {
        let x = key_input(AgentState::new(2.0, 3.0), AgentState::new(1.0, 1.0), 4, 4).unwrap();
        assert_eq!(x, [1.0, 2.0, 1.0]);
        assert!(matches!(
            key_input(AgentState::ORIGIN, AgentState::ORIGIN, 5, 4),
            Err(Error::HorizonOffset { delta_t: 5, horizon: 4 })
        ));
        assert!(key_input(AgentState::ORIGIN, AgentState::ORIGIN, 0, 4).is_err());
    }

    #[test]
    fn query_matches_recomputation() {
        let head = QueryHead::new(5, 7, &mut stream(2, &[]));
        let h = [0.5, -0.25, 1.0, 2.0, -1.5];
        let q = embed_query(&head, &h).unwrap();
        let q2 = embed_query(&head, &h).unwrap();
        assert_eq!(q, q2);
        let [l0, l1] = head.mlp().layers() else { panic!() };
        let hidden: Vec<f64> = (0..7)
            .map(|r| {
                let z: f64 = l0.bias()[r] + (0..5).map(|c| l0.weights()[r * 5 + c] * h[c]).sum::<f64>();
                z.max(0.0)
            })
            .collect();
        for r in 0..EMBED_DIM {
            let z: f64 = l1.bias()[r] + (0..7).map(|c| l1.weights()[r * 7 + c] * hidden[c]).sum::<f64>();
            assert!((z - q[r]).abs() < 1e-12);
        }
    }

    #[test]
    fn wrong_shapes_rejected() {
        assert!(QueryHead::from_mlp(Mlp::zeros("q", &[4, 4, 7], Activation::Identity)).is_err());
        assert!(KeyHead::from_mlp(Mlp::zeros("k", &[2, 4, 8], Activation::Identity)).is_err());
    }
}
