mod common;

use std::sync::Arc;

use proptest::prelude::*;
use snce::metrics::{case_collides, collision_rate, evaluate, evaluate_with, fde, CollisionCase, EvalOptions};
use snce::model::{Decoder, Model, ModelConfig};
use snce::nn::{Activation, Mlp};
use snce::rng::stream;
use snce::scene::{slice_samples, AgentState, Sample};
use snce::sim::{generate_scenes, ScenarioConfig};

use common::linear_scene;

fn point() -> impl Strategy<Value = AgentState> {
    (-5.0f64..5.0, -5.0f64..5.0).prop_map(|(x, y)| AgentState::new(x, y))
}

fn case() -> impl Strategy<Value = CollisionCase> {
    (1usize..6, 0usize..4).prop_flat_map(|(len, n)| {
        (
            prop::collection::vec(point(), len),
            prop::collection::vec(prop::collection::vec(prop::option::weighted(0.8, point()), len), n),
        )
            .prop_map(|(predicted, neighbors)| CollisionCase { predicted, neighbors })
    })
}

fn simulated_samples(n_scenes: usize) -> Vec<Sample> {
    let cfg = ScenarioConfig {
        n_scenes,
        seed: 5,
        ..Default::default()
    };
    generate_scenes(&cfg)
        .unwrap()
        .iter()
        .flat_map(|s| slice_samples(s, 8, 12, 4).unwrap())
        .collect()
}

/// Constant-velocity extrapolation of the last observed step.
fn constant_velocity(s: &Sample) -> snce::Result<Vec<AgentState>> {
    let obs = s.observed();
    let last = obs[obs.len() - 1];
    let prev = obs[obs.len() - 2];
    let (vx, vy) = (last.x - prev.x, last.y - prev.y);
    Ok((1..=s.pred_len())
        .map(|k| last.offset(vx * k as f64, vy * k as f64))
        .collect())
}

proptest! {
    #[test]
    fn collision_rate_monotone_in_threshold(
        cases in prop::collection::vec(case(), 1..20),
        a in 0.0f64..3.0,
        b in 0.0f64..3.0,
    ) {
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(collision_rate(&cases, lo).unwrap() <= collision_rate(&cases, hi).unwrap());
    }

    #[test]
    fn fde_is_rigid_motion_invariant(
        pred in prop::collection::vec(point(), 1..8),
        shift in point(),
        angle in 0.0f64..std::f64::consts::TAU,
    ) {
        let truth: Vec<AgentState> = pred.iter().map(|p| p.offset(0.3, -1.1)).collect();
        let (s, c) = angle.sin_cos();
        let move_it = |p: &AgentState| AgentState::new(c * p.x - s * p.y + shift.x, s * p.x + c * p.y + shift.y);
        let mp: Vec<AgentState> = pred.iter().map(move_it).collect();
        let mt: Vec<AgentState> = truth.iter().map(move_it).collect();
        let before = fde(&pred, &truth).unwrap();
        prop_assert!((fde(&mp, &mt).unwrap() - before).abs() < 1e-12 * (1.0 + before));
    }

    #[test]
    fn evaluation_is_partition_weighted(cut_seed in any::<u64>(), parts in 2usize..5) {
        let samples = simulated_samples(6);
        let opts = EvalOptions::default();
        let whole = evaluate_with(constant_velocity, &samples, &opts).unwrap();

        let mut labels: Vec<usize> = (0..samples.len()).map(|i| i % parts).collect();
        use rand::seq::SliceRandom;
        labels.shuffle(&mut stream(cut_seed, &[]));
        let (mut fde_sum, mut col_sum, mut n) = (0.0, 0.0, 0);
        for p in 0..parts {
            let subset: Vec<Sample> = samples.iter().zip(&labels).filter(|(_, &l)| l == p).map(|(s, _)| s.clone()).collect();
            let r = evaluate_with(constant_velocity, &subset, &opts).unwrap();
            fde_sum += r.fde_mean * r.n_cases as f64;
            col_sum += r.col_rate * r.n_cases as f64;
            n += r.n_cases;
        }
        prop_assert_eq!(n, whole.n_cases);
        prop_assert!((fde_sum / n as f64 - whole.fde_mean).abs() < 1e-12);
        prop_assert!((col_sum / n as f64 - whole.col_rate).abs() < 1e-12);
    }
}

#[test]
fn ground_truth_prediction_has_intrinsic_collision_rate() {
    let samples = simulated_samples(20);
    for threshold in [0.2, 0.5, 1.0] {
        let opts = EvalOptions {
            threshold,
            ..Default::default()
        };
        let report = evaluate_with(|s| Ok(s.future()), &samples, &opts).unwrap();
        let cases: Vec<CollisionCase> = samples
            .iter()
            .map(|s| CollisionCase {
                predicted: s.future(),
                neighbors: s.neighbor_futures(),
            })
            .collect();
        assert_eq!(report.col_rate, collision_rate(&cases, threshold).unwrap());
        assert_eq!(report.fde_mean, 0.0);
    }
}

#[test]
fn standing_still_in_a_crossing_path_collides() {
    // primary walks along y = 0; the neighbor walks through the primary's last observed point
    let scene = linear_scene("headon", &[(0.0, 0.0), (1.5, 4.0)], &[(0.5, 0.0), (0.0, -0.5)], 16);
    let sample = Sample::new(Arc::clone(&scene), 0, 4, 12, 0).unwrap();
    let mut model = Model::new(&ModelConfig { hidden: 6 }, 4, 12, &mut stream(1, &[]));
    model.decoder = Decoder::from_mlp(Mlp::zeros("decoder", &[6, 6, 24], Activation::Identity), 12).unwrap();
    let prediction = model.predict(&sample).unwrap();
    assert!(prediction.iter().all(|p| *p == sample.anchor()));
    let report = evaluate(&model, std::slice::from_ref(&sample), &EvalOptions::default()).unwrap();
    assert_eq!(report.col_rate, 100.0);
}

#[test]
fn single_case_rate_is_all_or_nothing() {
    let samples = simulated_samples(4);
    for s in samples.iter().take(30) {
        let r = evaluate_with(constant_velocity, std::slice::from_ref(s), &EvalOptions::default()).unwrap();
        assert!(r.col_rate == 0.0 || r.col_rate == 100.0);
    }
    let far = CollisionCase {
        predicted: vec![AgentState::ORIGIN; 3],
        neighbors: vec![vec![Some(AgentState::new(10.0, 0.0)); 3]],
    };
    assert!(!case_collides(&far, 0.2));
    assert_eq!(collision_rate(&[far], 0.0).unwrap(), 0.0);
}
