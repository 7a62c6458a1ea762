use proptest::prelude::*;
use rand::seq::SliceRandom;
use snce::config::RunConfig;
use snce::metrics::{CollisionMode, EvalReport};
use snce::rng::stream;
use snce::sweep::{
    best_trial, run_sweep, sample_config, Distribution, Objective, SearchSpace, SweepOptions, TrialRecord,
};

fn report(col: f64, fde: f64) -> EvalReport {
    EvalReport {
        fde_mean: fde,
        col_rate: col,
        n_cases: 10,
        threshold: 0.2,
        mode: CollisionMode::GroundTruth,
        per_dataset: vec![],
    }
}

/// Deterministic stand-in for training: a smooth function of the searched values.
fn stub_trainer(cfg: &RunConfig) -> snce::Result<EvalReport> {
    let col = 10.0 * (cfg.nce.temperature - 0.3).abs() + cfg.nce.horizon as f64;
    let fde = 0.5 + 0.01 * cfg.nce.contrastive_weight;
    Ok(report(col, fde))
}

fn strip_timing(records: &[TrialRecord]) -> Vec<TrialRecord> {
    records
        .iter()
        .cloned()
        .map(|mut r| {
            r.seconds = 0.0;
            r
        })
        .collect()
}

#[test]
fn fixed_search_seed_repeats_the_sweep() {
    let space = SearchSpace {
        trials: 12,
        seed: 7,
        ..SearchSpace::loss()
    };
    let run = |s: &SearchSpace| {
        let mut seen = Vec::new();
        let out = run_sweep(s, &RunConfig::default(), SweepOptions::default(), stub_trainer, |r| {
            seen.push(r.trial)
        })
        .unwrap();
        assert_eq!(seen, (0..12).collect::<Vec<_>>());
        out
    };
    let a = run(&space);
    let b = run(&space);
    assert_eq!(strip_timing(&a.trials), strip_timing(&b.trials));
    let c = run(&SearchSpace {
        seed: 8,
        ..space.clone()
    });
    assert_ne!(strip_timing(&a.trials), strip_timing(&c.trials));
}

#[test]
fn every_trial_in_range() {
    for space in [SearchSpace::loss(), SearchSpace::augmentation()] {
        let base = RunConfig::default();
        for trial in 0..10_000 {
            let cfg = sample_config(&space, &base, trial);
            let nce = &cfg.nce;
            let aug = &cfg.augment;
            for spec in &space.params {
                let value = match spec.param {
                    snce::sweep::Param::Temperature => nce.temperature,
                    snce::sweep::Param::Horizon => nce.horizon as f64,
                    snce::sweep::Param::ContrastiveWeight => nce.contrastive_weight,
                    snce::sweep::Param::RhoMin => aug.rho_min,
                    snce::sweep::Param::RhoMax => aug.rho_max,
                    snce::sweep::Param::NoiseWeight => aug.noise_weight,
                };
                match &spec.distribution {
                    Distribution::Uniform { lo, hi } => assert!(*lo <= value && value <= *hi),
                    Distribution::Grid { values } => assert!(values.contains(&value)),
                }
            }
            cfg.validate().unwrap();
        }
    }
}

#[test]
fn five_trials_cover_the_horizon_grid() {
    let space = SearchSpace::loss();
    let mut seen: Vec<usize> = (0..5)
        .map(|t| sample_config(&space, &RunConfig::default(), t).nce.horizon)
        .collect();
    seen.sort_unstable();
    assert_eq!(seen, vec![1, 2, 3, 4, 5]);
}

#[test]
fn search_space_and_objective_serialize() {
    for space in [SearchSpace::loss(), SearchSpace::augmentation()] {
        let text = serde_json::to_string(&space).unwrap();
        assert_eq!(serde_json::from_str::<SearchSpace>(&text).unwrap(), space);
    }
    for o in [Objective::Lexicographic, Objective::Weighted { alpha: 0.05 }] {
        assert_eq!(o.to_string().parse::<Objective>().unwrap(), o);
    }
}

proptest! {
    #[test]
    fn best_trial_ignores_record_order(
        values in prop::collection::vec((0u8..5, 0u8..5), 1..30),
        shuffle in any::<u64>(),
    ) {
        let records: Vec<TrialRecord> = values
            .iter()
            .enumerate()
            .map(|(trial, &(col, fde))| {
                let r = report(col as f64, fde as f64);
                TrialRecord {
                    trial,
                    config: RunConfig::default(),
                    objective: Some(Objective::Lexicographic.key(&r)),
                    report: Some(r),
                    error: None,
                    seconds: 0.0,
                }
            })
            .collect();
        let expected = best_trial(&records).unwrap().trial;
        let mut shuffled = records.clone();
        shuffled.shuffle(&mut stream(shuffle, &[]));
        prop_assert_eq!(best_trial(&shuffled).unwrap().trial, expected);

        let min = values.iter().min().unwrap();
        let first = values.iter().position(|v| v == min).unwrap();
        prop_assert_eq!(expected, first);
    }
}
