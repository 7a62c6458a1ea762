use proptest::prelude::*;
use snce::augment::KeyBundle;
use snce::heads::{embed_key, KeyHead, EMBED_DIM, KEY_INPUT_DIM};
use snce::loss::{infonce, log_sum_exp, snce_loss, softmax, DenominatorMode, NceConfig};
use snce::nn::{Activation, Mlp};
use snce::rng::stream;
use snce::scene::AgentState;

/// Keys whose first coordinate is the logit when `q = e1` and `tau = 1`.
fn keys_from_logits(logits: &[f64]) -> Vec<Vec<f64>> {
    logits
        .iter()
        .map(|&l| {
            let mut k = vec![0.0; EMBED_DIM];
            k[0] = l;
            k[1] = 0.3;
            k
        })
        .collect()
}

fn unit_query() -> Vec<f64> {
    let mut q = vec![0.0; EMBED_DIM];
    q[0] = 1.0;
    q
}

fn loss_of(logits: &[f64]) -> f64 {
    let keys = keys_from_logits(logits);
    infonce(&unit_query(), &keys[0], &keys[1..], 1.0).unwrap().loss
}

fn naive_softmax(logits: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = logits.iter().map(|l| l.exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

proptest! {
    #[test]
    fn loss_positive_with_any_negative(logits in prop::collection::vec(-10.0f64..10.0, 2..40)) {
        let term = {
            let keys = keys_from_logits(&logits);
            infonce(&unit_query(), &keys[0], &keys[1..], 1.0).unwrap()
        };
        prop_assert!(term.loss > 0.0);
        prop_assert!(term.positive_probability < 1.0);
        prop_assert!((term.loss + term.positive_probability.ln()).abs() < 1e-12);
    }

    #[test]
    fn loss_monotone_in_logits(
        logits in prop::collection::vec(-10.0f64..10.0, 2..20),
        which in any::<prop::sample::Index>(),
        delta in 0.01f64..1.0,
    ) {
        let base = loss_of(&logits);
        let mut up_pos = logits.clone();
        up_pos[0] += delta;
        prop_assert!(loss_of(&up_pos) < base);

        let j = 1 + which.index(logits.len() - 1);
        let mut up_neg = logits.clone();
        up_neg[j] += delta;
        prop_assert!(loss_of(&up_neg) > base);
    }

    #[test]
    fn shifted_softmax_matches_naive(
        logits in prop::collection::vec(-3.0f64..3.0, 1..50),
        tau in 0.1f64..1.0,
    ) {
        let scaled: Vec<f64> = logits.iter().map(|l| l / tau).collect();
        let stable = softmax(&scaled);
        for (a, b) in stable.iter().zip(naive_softmax(&scaled)) {
            prop_assert!((a - b).abs() < 1e-10);
        }
        let total: f64 = stable.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        let lse = log_sum_exp(&scaled);
        let naive = scaled.iter().map(|l| l.exp()).sum::<f64>().ln();
        prop_assert!((lse - naive).abs() < 1e-10 * (1.0 + naive.abs()));
    }

    #[test]
    fn probabilities_sum_to_one(
        q in prop::collection::vec(-1.0f64..1.0, EMBED_DIM),
        keys in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, EMBED_DIM), 1..40),
        tau in 0.05f64..1.0,
    ) {
        let term = infonce(&q, &keys[0], &keys[1..], tau).unwrap();
        let total: f64 = term.probabilities.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn query_gradient_closed_form(
        q in prop::collection::vec(-1.0f64..1.0, EMBED_DIM),
        keys in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, EMBED_DIM), 1..20),
        tau in 0.05f64..1.0,
    ) {
        let term = infonce(&q, &keys[0], &keys[1..], tau).unwrap();
        let logits: Vec<f64> = keys.iter().map(|k| k.iter().zip(&q).map(|(a, b)| a * b).sum::<f64>() / tau).collect();
        let p = naive_softmax(&logits);
        for d in 0..EMBED_DIM {
            let expected: f64 = keys.iter().zip(&p).map(|(k, pk)| pk * k[d]).sum::<f64>();
            let closed = (expected - keys[0][d]) / tau;
            prop_assert!((term.grad_query[d] - closed).abs() < 1e-9 * (1.0 + closed.abs()));
        }
    }
}

#[test]
fn uniform_logits_give_log_count() {
    let q = unit_query();
    let k = keys_from_logits(&[0.7])[0].clone();
    for n in [1usize, 8, 32] {
        let negatives = vec![k.clone(); n];
        let term = infonce(&q, &k, &negatives, 0.1).unwrap();
        assert!((term.loss - ((n + 1) as f64).ln()).abs() < 1e-12);
    }
    assert_eq!(infonce(&q, &k, &[], 0.1).unwrap().loss, 0.0);
}

#[test]
fn hand_computed_pair() {
    let mut neg = vec![0.0; EMBED_DIM];
    neg[0] = -1.0;
    let term = infonce(&unit_query(), &unit_query(), &[neg], 1.0).unwrap();
    // -log(e / (e + 1/e))
    assert!((term.loss - 0.126_928_011_042_972_6).abs() < 1e-12);
}

/// Per-offset terms averaged over non-empty bundles equal individual InfoNCE terms.
#[test]
fn per_offset_loss_is_mean_of_infonce_terms() {
    let head = KeyHead::new(12, &mut stream(4, &[]));
    let origin = AgentState::new(1.0, -2.0);
    let q: Vec<f64> = (0..EMBED_DIM).map(|i| 0.2 * (i as f64).sin()).collect();
    let bundles: Vec<KeyBundle> = (1..=3)
        .map(|dt| KeyBundle {
            horizon_offset: dt,
            positive: AgentState::new(1.0 + 0.3 * dt as f64, -2.0),
            negatives: if dt == 2 {
                vec![]
            } else {
                (0..5)
                    .map(|i| AgentState::new(i as f64 * 0.4, 0.1 * dt as f64))
                    .collect()
            },
            source_neighbor: if dt == 2 { vec![] } else { vec![1; 5] },
        })
        .collect();
    let cfg = NceConfig {
        horizon: 3,
        temperature: 0.2,
        denominator_mode: DenominatorMode::PerHorizon,
        ..Default::default()
    };
    let out = snce_loss(&q, &bundles, &head, origin, &cfg).unwrap();
    let terms: Vec<f64> = bundles
        .iter()
        .filter(|b| !b.negatives.is_empty())
        .map(|b| {
            let key = |loc| embed_key(&head, loc, origin, b.horizon_offset, 3).unwrap();
            let negatives: Vec<Vec<f64>> = b.negatives.iter().map(|&n| key(n)).collect();
            infonce(&q, &key(b.positive), &negatives, 0.2).unwrap().loss
        })
        .collect();
    assert_eq!(out.active_bundles, 2);
    assert!((out.loss - terms.iter().sum::<f64>() / 2.0).abs() < 1e-12);
}

#[test]
fn zero_key_head_gives_log_33_per_offset() {
    let head = KeyHead::from_mlp(Mlp::zeros("key", &[KEY_INPUT_DIM, 8, EMBED_DIM], Activation::Identity)).unwrap();
    let q: Vec<f64> = (0..EMBED_DIM).map(|i| i as f64 - 3.0).collect();
    let bundles: Vec<KeyBundle> = (1..=4)
        .map(|dt| KeyBundle {
            horizon_offset: dt,
            positive: AgentState::new(dt as f64, 0.0),
            negatives: (0..32).map(|i| AgentState::new(i as f64, -1.0)).collect(),
            source_neighbor: (0..32).map(|i| 1 + i / 8).collect(),
        })
        .collect();
    let out = snce_loss(&q, &bundles, &head, AgentState::ORIGIN, &NceConfig::default()).unwrap();
    for (_, l) in &out.per_offset {
        assert!((l - 33f64.ln()).abs() < 1e-9);
    }
    assert_eq!(out.per_offset.len(), 4);
}
