//! Deterministic circle-crossing crowd generator.
//!
//! Agents start on a circle at jittered angles and walk toward the antipodal
//! point. Each step, velocity is the preferred velocity toward the goal plus a
//! pairwise repulsion `strength * (1/d - 1/range)` away from every neighbor
//! closer than `range`, plus a small right-hand tangential bias while any
//! neighbor is in range (it breaks exact head-on deadlock). Speed is clamped
//! to the preferred speed and positions are integrated explicitly.

use std::f64::consts::TAU;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream;
use crate::scene::{AgentState, Scene};

const SCENE_STREAM: u64 = 0x5ce7e;
const SPLIT_STREAM: u64 = 0x5b117;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n_agents: usize,
    pub n_scenes: usize,
    pub circle_radius: f64,
    pub preferred_speed: f64,
    pub frame_interval: f64,
    pub steps: usize,
    pub repulsion_strength: f64,
    pub repulsion_range: f64,
    /// Tangential deadlock-breaking speed, m/s.
    pub tangential_bias: f64,
    /// Angular jitter as a fraction of the even spacing `2*pi/n_agents`.
    pub angle_jitter: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_agents: 5,
            n_scenes: 500,
            circle_radius: 4.0,
            preferred_speed: 1.0,
            frame_interval: 0.4,
            steps: 20,
            repulsion_strength: 1.5,
            repulsion_range: 1.2,
            tangential_bias: 0.05,
            angle_jitter: 1.0,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_agents < 2 {
            return Err(Error::InvalidConfig(format!(
                "simulator needs at least 2 agents, got {}",
                self.n_agents
            )));
        }
        if self.steps < 2 {
            return Err(Error::InvalidConfig(format!(
                "simulator needs at least 2 steps, got {}",
                self.steps
            )));
        }
        let positive = [
            ("circle_radius", self.circle_radius),
            ("preferred_speed", self.preferred_speed),
            ("frame_interval", self.frame_interval),
            ("repulsion_range", self.repulsion_range),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("repulsion_strength", self.repulsion_strength),
            ("tangential_bias", self.tangential_bias),
            ("angle_jitter", self.angle_jitter),
        ];
        for (name, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub validation_fraction: f64,
    pub split_seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            validation_fraction: 0.3,
            split_seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::InvalidConfig(format!(
                "validation fraction must be in [0, 1), got {}",
                self.validation_fraction
            )));
        }
        Ok(())
    }
}

/// Initial condition of one simulated agent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentSpec {
    pub start: AgentState,
    pub goal: AgentState,
    /// `+1` biases to the right of the goal direction, `-1` to the left.
    pub handedness: f64,
}

impl AgentSpec {
    pub fn new(start: AgentState, goal: AgentState) -> Self {
        Self {
            start,
            goal,
            handedness: 1.0,
        }
    }
}

fn velocity(i: usize, positions: &[AgentState], spec: &AgentSpec, cfg: &ScenarioConfig) -> (f64, f64) {
    let p = positions[i];
    let to_goal = spec.goal.relative_to(&p);
    let dist = to_goal.norm();
    let (ux, uy) = if dist > 1e-12 {
        (to_goal.x / dist, to_goal.y / dist)
    } else {
        (0.0, 0.0)
    };
    let pref = cfg.preferred_speed.min(dist / cfg.frame_interval);
    let (mut vx, mut vy) = (ux * pref, uy * pref);

    let mut active = false;
    for (j, q) in positions.iter().enumerate() {
        if j == i {
            continue;
        }
        let e = p.relative_to(q);
        let d = e.norm();
        if d < cfg.repulsion_range && d > 1e-12 {
            active = true;
            let f = cfg.repulsion_strength * (1.0 / d - 1.0 / cfg.repulsion_range) / d;
            vx += f * e.x;
            vy += f * e.y;
        }
    }
    if active && cfg.repulsion_strength > 0.0 && dist > 1e-12 {
        let b = cfg.tangential_bias * spec.handedness;
        vx += b * uy;
        vy -= b * ux;
    }
    let speed = vx.hypot(vy);
    if speed > cfg.preferred_speed {
        let s = cfg.preferred_speed / speed;
        vx *= s;
        vy *= s;
    }
    (vx, vy)
}

/// Roll out `cfg.steps` frames (the initial frame included) from explicit
/// initial conditions. Returns positions time-major.
pub fn rollout(agents: &[AgentSpec], cfg: &ScenarioConfig) -> Vec<Vec<AgentState>> {
    let mut positions: Vec<AgentState> = agents.iter().map(|a| a.start).collect();
    let mut frames = Vec::with_capacity(cfg.steps);
    frames.push(positions.clone());
    for _ in 1..cfg.steps {
        let v: Vec<(f64, f64)> = (0..agents.len())
            .map(|i| velocity(i, &positions, &agents[i], cfg))
            .collect();
        for (p, (vx, vy)) in positions.iter_mut().zip(v) {
            *p = p.offset(vx * cfg.frame_interval, vy * cfg.frame_interval);
        }
        frames.push(positions.clone());
    }
    frames
}

/// Jittered circle-crossing initial conditions for scene `index`.
pub fn initial_conditions(cfg: &ScenarioConfig, index: u64) -> Vec<AgentSpec> {
    let mut rng = stream(cfg.seed, &[SCENE_STREAM, index]);
    let n = cfg.n_agents;
    let spacing = TAU / n as f64;
    let base: f64 = rng.random_range(0.0..TAU);
    (0..n)
        .map(|i| {
            let jitter = if cfg.angle_jitter > 0.0 {
                rng.random_range(-cfg.angle_jitter..cfg.angle_jitter)
            } else {
                0.0
            };
            let a = base + spacing * i as f64 + jitter * spacing;
            let start = AgentState::new(cfg.circle_radius * a.cos(), cfg.circle_radius * a.sin());
            AgentSpec::new(start, AgentState::new(-start.x, -start.y))
        })
        .collect()
}

pub fn scene_from_rollout(id: impl Into<String>, frames: Vec<Vec<AgentState>>, dt: f64) -> Result<Scene> {
    Scene::from_grid(
        id,
        dt,
        frames
            .into_iter()
            .map(|row| row.into_iter().map(Some).collect())
            .collect(),
    )
}

/// Scene `index`, fully determined by `(cfg.seed, index)`.
pub fn generate_scene(cfg: &ScenarioConfig, index: u64) -> Result<Scene> {
    cfg.validate()?;
    let frames = rollout(&initial_conditions(cfg, index), cfg);
    scene_from_rollout(format!("synthetic/{index:05}"), frames, cfg.frame_interval)
}

/// Every scene of the configured set, in index order.
pub fn generate_scenes(cfg: &ScenarioConfig) -> Result<Vec<Arc<Scene>>> {
    cfg.validate()?;
    (0..cfg.n_scenes as u64)
        .into_par_iter()
        .map(|i| generate_scene(cfg, i).map(Arc::new))
        .collect()
}

/// Seeded split of `0..n` into sorted (train, validation) indices; the
/// validation count is `floor(n * fraction)`.
pub fn split_indices(n: usize, split: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    split.validate()?;
    let n_val = (n as f64 * split.validation_fraction + 1e-9).floor() as usize;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut stream(split.split_seed, &[SPLIT_STREAM]));
    let mut val = perm[..n_val].to_vec();
    let mut train = perm[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}

pub fn split_scenes<T: Clone>(items: &[T], split: &SplitSpec) -> Result<(Vec<T>, Vec<T>)> {
    let (train, val) = split_indices(items.len(), split)?;
    Ok((
        train.into_iter().map(|i| items[i].clone()).collect(),
        val.into_iter().map(|i| items[i].clone()).collect(),
    ))
}

/// `(train scenes, validation scenes)`.
/// Training and validation scenes.
pub type SceneSplit = (Vec<Arc<Scene>>, Vec<Arc<Scene>>);

pub fn generate_dataset(cfg: &ScenarioConfig, split: &SplitSpec) -> Result<SceneSplit> {
    split_scenes(&generate_scenes(cfg)?, split)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InteractionStats {
    pub n_scenes: usize,
    /// Per-scene minimum pairwise distance over all frames, in scene order.
    pub min_distances: Vec<f64>,
    pub min_distance_mean: f64,
    /// 10th, 50th and 90th percentile of the per-scene minima.
    pub min_distance_quantiles: [f64; 3],
    pub near_miss_distance: f64,
    /// Fraction of scenes whose closest approach is below `near_miss_distance`.
    pub near_miss_fraction: f64,
}

fn scene_min_distance(scene: &Scene) -> f64 {
    let mut best = f64::INFINITY;
    for f in 0..scene.n_frames() {
        for a in 0..scene.n_agents() {
            let Some(pa) = scene.state(f, a) else { continue };
            for b in a + 1..scene.n_agents() {
                if let Some(pb) = scene.state(f, b) {
                    best = best.min(pa.distance(&pb));
                }
            }
        }
    }
    best
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

pub fn interaction_stats(scenes: &[Arc<Scene>], near_miss_distance: f64) -> Result<InteractionStats> {
    if scenes.is_empty() {
        return Err(Error::Empty("scene list"));
    }
    let min_distances: Vec<f64> = scenes.iter().map(|s| scene_min_distance(s)).collect();
    let mut sorted = min_distances.clone();
    sorted.sort_by(f64::total_cmp);
    let n = scenes.len() as f64;
    let near = min_distances.iter().filter(|&&d| d < near_miss_distance).count();
    Ok(InteractionStats {
        n_scenes: scenes.len(),
        min_distance_mean: min_distances.iter().sum::<f64>() / n,
        min_distance_quantiles: [quantile(&sorted, 0.1), quantile(&sorted, 0.5), quantile(&sorted, 0.9)],
        min_distances,
        near_miss_distance,
        near_miss_fraction: near as f64 / n,
    })
}
