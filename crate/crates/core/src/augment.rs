//! Positive and negative key locations for the social contrastive objective.
//!
//! Negatives are placed on rings around every other agent present at the
//! target frame: `s_j + rho * (cos theta_p, sin theta_p) + noise`, with
//! `theta_p = 2 pi p / n_directions`. The positive is the primary agent's
//! ground-truth position plus the same noise law.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{AgentState, Sample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Smallest ring radius, meters.
    pub rho_min: f64,
    /// Largest ring radius, meters.
    pub rho_max: f64,
    /// Per-axis standard deviation of the location noise, meters.
    pub noise_weight: f64,
    pub n_directions: usize,
    /// Mixed into the training seed to derive augmentation streams.
    pub rng_seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rho_min: 0.2,
            rho_max: 2.5,
            noise_weight: 0.2,
            n_directions: 8,
            rng_seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho_min.is_finite() && self.rho_min > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "rho_min must be positive, got {}",
                self.rho_min
            )));
        }
        if !(self.rho_max.is_finite() && self.rho_max >= self.rho_min) {
            return Err(Error::InvalidConfig(format!(
                "rho_max ({}) must be at least rho_min ({})",
                self.rho_max, self.rho_min
            )));
        }
        if !(self.noise_weight.is_finite() && self.noise_weight >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "noise_weight must be non-negative, got {}",
                self.noise_weight
            )));
        }
        if self.n_directions == 0 {
            return Err(Error::InvalidConfig("n_directions must be at least 1".into()));
        }
        Ok(())
    }

    /// Angle of ring direction `p`.
    pub fn direction_angle(&self, p: usize) -> f64 {
        2.0 * std::f64::consts::PI * p as f64 / self.n_directions as f64
    }

    fn noise(&self) -> Normal<f64> {
        Normal::new(0.0, self.noise_weight).expect("noise_weight validated non-negative")
    }

    fn draw_radius<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.rho_max > self.rho_min {
            rng.random_range(self.rho_min..=self.rho_max)
        } else {
            self.rho_min
        }
    }
}

/// Keys for one sample at one horizon offset.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyBundle {
    pub horizon_offset: usize,
    pub positive: AgentState,
    pub negatives: Vec<AgentState>,
    /// Agent index each negative was placed around, parallel to `negatives`.
    pub source_neighbor: Vec<usize>,
}

fn check_offset(sample: &Sample, delta_t: usize) {
    assert!(
        (1..=sample.pred_len()).contains(&delta_t),
        "horizon offset {delta_t} outside 1..={}",
        sample.pred_len()
    );
}

fn ring_negatives<R: Rng + ?Sized>(
    sample: &Sample,
    delta_t: usize,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> (Vec<AgentState>, Vec<usize>) {
    check_offset(sample, delta_t);
    let noise = cfg.noise();
    let neighbors = sample.neighbors_at(sample.obs_len() - 1 + delta_t);
    let mut points = Vec::with_capacity(neighbors.len() * cfg.n_directions);
    let mut sources = Vec::with_capacity(points.capacity());
    for (j, s) in neighbors {
        for p in 0..cfg.n_directions {
            let theta = cfg.direction_angle(p);
            let rho = cfg.draw_radius(rng);
            let ex = noise.sample(rng);
            let ey = noise.sample(rng);
            points.push(s.offset(rho * theta.cos() + ex, rho * theta.sin() + ey));
            sources.push(j);
        }
    }
    (points, sources)
}

/// Ring negatives around every neighbor present at `t + delta_t`.
/// Empty when no neighbor is present.
pub fn negative_keys<R: Rng + ?Sized>(
    sample: &Sample,
    delta_t: usize,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Vec<AgentState> {
    ring_negatives(sample, delta_t, cfg, rng).0
}

/// Ground-truth primary position at `t + delta_t` plus noise.
pub fn positive_key<R: Rng + ?Sized>(sample: &Sample, delta_t: usize, cfg: &AugmentConfig, rng: &mut R) -> AgentState {
    check_offset(sample, delta_t);
    let noise = cfg.noise();
    let gt = sample.primary_at(sample.obs_len() - 1 + delta_t);
    let ex = noise.sample(rng);
    let ey = noise.sample(rng);
    gt.offset(ex, ey)
}

/// One bundle per offset in `1..=horizon`.
pub fn build_key_bundles<R: Rng + ?Sized>(
    sample: &Sample,
    horizon: usize,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<Vec<KeyBundle>> {
    if horizon == 0 {
        return Err(Error::InvalidConfig("sampling horizon must be at least 1".into()));
    }
    if horizon > sample.pred_len() {
        return Err(Error::HorizonTooLong {
            horizon,
            pred_len: sample.pred_len(),
        });
    }
    Ok((1..=horizon)
        .map(|delta_t| {
            let positive = positive_key(sample, delta_t, cfg, rng);
            let (negatives, source_neighbor) = ring_negatives(sample, delta_t, cfg, rng);
            KeyBundle {
                horizon_offset: delta_t,
                positive,
                negatives,
                source_neighbor,
            }
        })
        .collect())
}
