#![allow(dead_code)]

use std::sync::Arc;

use proptest::prelude::*;
use snce::config::{DataSource, RunConfig};
use snce::model::ModelConfig;
use snce::scene::{AgentState, Scene};
use snce::sim::{ScenarioConfig, SplitSpec};

/// Scene with agent `j` present over the inclusive frame span `spans[j]`.
pub fn scene_with_spans(n_frames: usize, spans: &[(usize, usize)], coords: &[f64]) -> Scene {
    let m = spans.len();
    let grid = (0..n_frames)
        .map(|t| {
            (0..m)
                .map(|j| {
                    let (a, b) = spans[j];
                    (a <= t && t <= b).then(|| {
                        let k = 2 * (t * m + j);
                        AgentState::new(
                            coords[k % coords.len()] + t as f64,
                            coords[(k + 1) % coords.len()] - j as f64,
                        )
                    })
                })
                .collect()
        })
        .collect();
    Scene::from_grid("random/0", 0.4, grid).expect("spans are valid")
}

/// Scenes with `2..=max_agents` agents over `2..=max_frames` frames, each
/// agent present over one contiguous span; frames 0 and T-1 are occupied.
pub fn arb_scene(max_agents: usize, max_frames: usize) -> impl Strategy<Value = Scene> {
    (2..=max_agents, 2..=max_frames)
        .prop_flat_map(|(m, t)| {
            (
                Just(t),
                prop::collection::vec((0..t, 0..t), m),
                prop::collection::vec(-5.0f64..5.0, 8),
            )
        })
        .prop_map(|(t, raw, coords)| {
            let mut spans: Vec<(usize, usize)> = raw.into_iter().map(|(a, b)| (a.min(b), a.max(b))).collect();
            spans[0].0 = 0;
            let last = spans.len() - 1;
            spans[last].1 = t - 1;
            scene_with_spans(t, &spans, &coords)
        })
}

/// Agents on straight lines, all present throughout.
pub fn linear_scene(id: &str, starts: &[(f64, f64)], velocities: &[(f64, f64)], n_frames: usize) -> Arc<Scene> {
    let grid = (0..n_frames)
        .map(|t| {
            starts
                .iter()
                .zip(velocities)
                .map(|(&(x, y), &(vx, vy))| Some(AgentState::new(x + vx * t as f64, y + vy * t as f64)))
                .collect()
        })
        .collect();
    Arc::new(Scene::from_grid(id, 0.4, grid).expect("valid linear scene"))
}

/// Small synthetic run that trains in well under a second per epoch.
pub fn tiny_run(seed: u64) -> RunConfig {
    let mut run = RunConfig {
        data: DataSource::Synthetic {
            scenario: ScenarioConfig {
                n_scenes: 12,
                steps: 12,
                seed: 3,
                ..Default::default()
            },
            split: SplitSpec::default(),
        },
        obs_len: 4,
        pred_len: 6,
        window_stride: 2,
        model: ModelConfig { hidden: 8 },
        epochs: 3,
        seed,
        ..Default::default()
    };
    run.optimizer.batch_size = 16;
    run
}
