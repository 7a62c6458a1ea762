mod common;

use std::sync::Arc;

use proptest::prelude::*;
use snce::scene::{build_scene, slice_samples, Sample};

use common::arb_scene;

proptest! {
    #[test]
    fn window_count_matches_enumeration(
        scene in arb_scene(4, 12),
        obs in 1usize..5,
        pred in 1usize..5,
        stride in 1usize..4,
    ) {
        let scene = Arc::new(scene);
        let samples = slice_samples(&scene, obs, pred, stride).unwrap();

        let mut expected = Vec::new();
        let mut start = 0;
        while start + obs + pred <= scene.n_frames() {
            for agent in 0..scene.n_agents() {
                if (start..start + obs + pred).all(|f| scene.state(f, agent).is_some()) {
                    expected.push((start, agent));
                }
            }
            start += stride;
        }
        let got: Vec<(usize, usize)> = samples.iter().map(|s| (s.start_frame(), s.primary())).collect();
        prop_assert_eq!(got, expected);

        for s in &samples {
            let again = Sample::new(scene.clone(), s.primary(), s.obs_len(), s.pred_len(), s.start_frame());
            prop_assert!(again.is_ok());
            prop_assert!(s.start_frame() + s.window_len() <= scene.n_frames());
        }
    }

    #[test]
    fn records_rebuild_the_scene(scene in arb_scene(4, 12)) {
        let rebuilt = build_scene(&scene.to_records(), scene.frame_interval()).unwrap();
        prop_assert_eq!(rebuilt.with_id(scene.id()), scene);
    }

    #[test]
    fn neighbors_are_the_other_present_agents(scene in arb_scene(5, 10), obs in 1usize..4, pred in 1usize..4) {
        let scene = Arc::new(scene);
        for s in slice_samples(&scene, obs, pred, 1).unwrap() {
            for offset in 0..s.window_len() {
                let frame = s.start_frame() + offset;
                let expected: Vec<_> = (0..scene.n_agents())
                    .filter(|&j| j != s.primary())
                    .filter_map(|j| scene.state(frame, j).map(|st| (j, st)))
                    .collect();
                prop_assert_eq!(s.neighbors_at(offset), expected);
            }
        }
    }
}
