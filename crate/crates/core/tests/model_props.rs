mod common;

use std::sync::Arc;

use proptest::prelude::*;
use snce::augment::{build_key_bundles, AugmentConfig};
use snce::loss::NceConfig;
use snce::model::{combined_loss, loss_and_grad, LossWeights, Model, ModelConfig};
use snce::rng::stream;
use snce::scene::{Sample, Scene};

use common::arb_scene;

/// Same scene with agent columns reordered: new column `k` holds old agent `perm[k]`.
fn permute_agents(scene: &Scene, perm: &[usize]) -> Scene {
    let grid = (0..scene.n_frames())
        .map(|t| perm.iter().map(|&j| scene.state(t, j)).collect())
        .collect();
    Scene::from_grid(scene.id(), scene.frame_interval(), grid).unwrap()
}

fn translate(scene: &Scene, dx: f64, dy: f64) -> Scene {
    let grid = (0..scene.n_frames())
        .map(|t| {
            (0..scene.n_agents())
                .map(|j| scene.state(t, j).map(|s| s.offset(dx, dy)))
                .collect()
        })
        .collect();
    Scene::from_grid(scene.id(), scene.frame_interval(), grid).unwrap()
}

fn first_sample(scene: &Arc<Scene>, obs: usize, pred: usize) -> Option<Sample> {
    snce::scene::slice_samples(scene, obs, pred, 1)
        .unwrap()
        .into_iter()
        .next()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn encoding_ignores_neighbor_order(
        scene in arb_scene(5, 10),
        shuffle_seed in any::<u64>(),
        model_seed in any::<u64>(),
    ) {
        let scene = Arc::new(scene);
        let Some(sample) = first_sample(&scene, 3, 2) else { return Ok(()) };
        let m = scene.n_agents();
        let mut perm: Vec<usize> = (0..m).collect();
        use rand::seq::SliceRandom;
        perm.shuffle(&mut stream(shuffle_seed, &[]));
        let new_primary = perm.iter().position(|&j| j == sample.primary()).unwrap();
        let permuted = Arc::new(permute_agents(&scene, &perm));
        let moved = Sample::new(permuted, new_primary, 3, 2, sample.start_frame()).unwrap();

        let model = Model::new(&ModelConfig { hidden: 10 }, 3, 2, &mut stream(model_seed, &[]));
        let a = model.encoder.encode(&sample).unwrap();
        let b = model.encoder.encode(&moved).unwrap();
        prop_assert!(max_diff(&a, &b) < 1e-10);
    }

    #[test]
    fn encoding_ignores_translation(scene in arb_scene(5, 10), model_seed in any::<u64>()) {
        let scene = Arc::new(scene);
        let Some(sample) = first_sample(&scene, 3, 2) else { return Ok(()) };
        let shifted = Arc::new(translate(&scene, 10.0, 10.0));
        let moved = Sample::new(shifted, sample.primary(), 3, 2, sample.start_frame()).unwrap();

        let model = Model::new(&ModelConfig { hidden: 10 }, 3, 2, &mut stream(model_seed, &[]));
        let a = model.encoder.encode(&sample).unwrap();
        let b = model.encoder.encode(&moved).unwrap();
        prop_assert!(max_diff(&a, &b) < 1e-10);

        let pa = model.predict(&sample).unwrap();
        let pb = model.predict(&moved).unwrap();
        for (p, q) in pa.iter().zip(&pb) {
            prop_assert!((p.x + 10.0 - q.x).abs() < 1e-9 && (p.y + 10.0 - q.y).abs() < 1e-9);
        }
    }

    #[test]
    fn combined_loss_decomposes(
        scene in arb_scene(5, 10),
        seed in any::<u64>(),
        lambda in 0.0f64..20.0,
    ) {
        let scene = Arc::new(scene);
        let Some(sample) = first_sample(&scene, 3, 3) else { return Ok(()) };
        let model = Model::new(&ModelConfig { hidden: 8 }, 3, 3, &mut stream(seed, &[]));
        let nce = NceConfig { horizon: 3, contrastive_weight: lambda, ..Default::default() };
        let out = combined_loss(&sample, &model, &nce, &AugmentConfig::default(), &mut stream(seed, &[1])).unwrap();
        prop_assert!(out.task >= 0.0 && out.nce >= 0.0 && out.combined >= 0.0);
        prop_assert!((out.combined - (out.task + lambda * out.nce)).abs() < 1e-10 * (1.0 + out.combined));
    }

    #[test]
    fn disabled_branches_give_exactly_zero_gradients(scene in arb_scene(5, 10), seed in any::<u64>()) {
        let scene = Arc::new(scene);
        let Some(sample) = first_sample(&scene, 3, 3) else { return Ok(()) };
        let model = Model::new(&ModelConfig { hidden: 8 }, 3, 3, &mut stream(seed, &[]));
        let nce = NceConfig { horizon: 3, ..Default::default() };
        let bundles = build_key_bundles(&sample, 3, &AugmentConfig::default(), &mut stream(seed, &[2])).unwrap();

        let task_only = loss_and_grad(&model, &sample, &bundles, &nce, LossWeights { task: 1.0, contrastive: 0.0 }).unwrap();
        prop_assert!(task_only.grad.query.is_zero() && task_only.grad.key.is_zero());
        prop_assert_eq!(task_only.combined, task_only.task);

        let nce_only = loss_and_grad(&model, &sample, &bundles, &nce, LossWeights { task: 0.0, contrastive: 2.0 }).unwrap();
        prop_assert!(nce_only.grad.decoder.is_zero());
    }
}

#[test]
fn zero_model_encodes_to_zero() {
    let scene = Arc::new(common::scene_with_spans(
        6,
        &[(0, 5), (0, 5), (1, 4)],
        &[0.5, 1.0, -2.0],
    ));
    let sample = first_sample(&scene, 2, 2).unwrap();
    let mut model = Model::new(&ModelConfig { hidden: 6 }, 2, 2, &mut stream(0, &[]));
    let zeros = vec![0.0; model.n_params()];
    model.set_flat_params(&zeros).unwrap();
    assert!(model.encoder.encode(&sample).unwrap().iter().all(|&v| v == 0.0));
    let anchor = sample.anchor();
    assert!(model.predict(&sample).unwrap().iter().all(|p| *p == anchor));
}
