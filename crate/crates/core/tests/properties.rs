use std::sync::Arc;

use proptest::prelude::*;

use vbp_core::backend::{self, obfuscation_score, Backend, BackendRequest, MockBackend};
use vbp_core::env::{make_cor, make_rel, POSITIVE, NEGATIVE};
use vbp_core::game::{expected_utilities, obedience_violation, BpInstance, ReceiverPolicy, SignalingScheme};
use vbp_core::metrics::scheme_playout_rates;
use vbp_core::oracles::{obfuscation_refine, polarize};
use vbp_core::playout::{Arena, PlayOptions, Strategy as PoolEntry};
use vbp_core::solver::{binary_search_optimal, solve_direct_lp};

fn ids(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

fn instance() -> impl Strategy<Value = BpInstance> {
    (2usize..=3, 2usize..=3).prop_flat_map(|(ns, na)| {
        (
            prop::collection::vec(0.05f64..1.0, ns),
            prop::collection::vec(prop::collection::vec(-1.0f64..1.0, na), ns),
            prop::collection::vec(prop::collection::vec(-1.0f64..1.0, na), ns),
        )
            .prop_map(move |(w, us, ur)| {
                let total: f64 = w.iter().sum();
                let mut prior: Vec<f64> = w.iter().map(|x| x / total).collect();
                let rest: f64 = prior[1..].iter().sum();
                prior[0] = 1.0 - rest;
                BpInstance::new("random", ids("w", ns), ids("a", na), ids("a", na), prior, us, ur).unwrap()
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn lp_and_bisection_agree(inst in instance()) {
        let lp = solve_direct_lp(&inst).unwrap();
        let bs = binary_search_optimal(&inst, 1e-7).unwrap();
        prop_assert!((lp.sender_value - bs.sender_value).abs() <= 1e-4, "{} vs {}", lp.sender_value, bs.sender_value);
        prop_assert!(obedience_violation(&inst, &lp.scheme).unwrap() <= 1e-7);
        let honest = SignalingScheme::honest(&inst);
        if let Ok(h) = honest {
            if obedience_violation(&inst, &h).unwrap() <= 1e-12 {
                let v = expected_utilities(&inst, &h, &ReceiverPolicy::obedient(inst.n_actions()).unwrap()).unwrap();
                prop_assert!(lp.sender_value >= v.sender - 1e-7);
            }
        }
    }

    #[test]
    fn mock_is_a_pure_function_of_the_request(prompt in "[a-z][a-z ]{0,39}", seed in any::<u64>()) {
        let a = MockBackend::new().unwrap();
        let b = MockBackend::new().unwrap();
        for req in [
            BackendRequest::complete(prompt.clone(), seed),
            BackendRequest::score(prompt.clone(), "polarity", seed),
            BackendRequest::score(prompt.clone(), "obfuscation", seed),
        ] {
            let x = a.call(&req).unwrap();
            let y = b.call(&req).unwrap();
            prop_assert_eq!(x.text, y.text);
            prop_assert_eq!(x.score, y.score);
        }
    }

    #[test]
    fn obfuscation_never_decreases_and_keeps_polarity(seed in any::<u64>(), rounds in 0usize..4, positive in any::<bool>()) {
        let env = make_rel().unwrap();
        let b = MockBackend::new().unwrap();
        let msg = if positive {
            "An excellent candidate with strong, proven results. I recommend hiring."
        } else {
            "A weak candidate with poor results. I do not recommend hiring."
        };
        let before = polarize(msg, &env, &b, seed).unwrap();
        let out = obfuscation_refine(msg, "", rounds, &env, &b, seed).unwrap();
        prop_assert!(obfuscation_score(&out) >= obfuscation_score(msg) - 1e-12);
        prop_assert_eq!(polarize(&out, &env, &b, seed).unwrap(), before);
    }
}

#[test]
fn sampled_lie_rate_matches_the_scheme_within_three_sigma() {
    let samples = 2000;
    for env in [make_rel().unwrap(), make_cor().unwrap()] {
        let scheme = solve_direct_lp(&env.base).unwrap().scheme;
        let p_neg = env.base.prior[NEGATIVE];
        let arena = Arena::new(env, Arc::new(MockBackend::new().unwrap()), PlayOptions::default()).unwrap();
        let (lie, honest) = scheme_playout_rates(&arena, &scheme, samples).unwrap();
        let expected = scheme.prob(NEGATIVE, POSITIVE);
        let n = samples as f64 * p_neg;
        let sigma = (expected * (1.0 - expected) / n).sqrt();
        let lie = lie.unwrap();
        assert!((lie - expected).abs() <= 3.0 * sigma + 1e-3, "lie {lie} vs {expected} (sigma {sigma})");
        assert_eq!(honest, Some(1.0));
    }
}

#[test]
fn exact_cells_match_expected_utilities() {
    let env = make_rel().unwrap();
    let inst = env.base.clone();
    let arena = Arena::new(env, Arc::new(MockBackend::new().unwrap()), PlayOptions::default()).unwrap();
    let scheme = solve_direct_lp(&inst).unwrap().scheme;
    for policy in [ReceiverPolicy::obedient(2).unwrap(), ReceiverPolicy::constant(2, 2, 0).unwrap()] {
        let v = expected_utilities(&inst, &scheme, &policy).unwrap();
        let cell = arena.cell(&PoolEntry::Scheme(scheme.clone()), &PoolEntry::Policy(policy)).unwrap();
        assert!((cell.sender - v.sender).abs() < 1e-12);
        assert!((cell.receiver - v.receiver).abs() < 1e-12);
        let mass: f64 = cell.label_mass.iter().flatten().sum();
        assert!((mass - 1.0).abs() < 1e-12);
    }
}

#[test]
fn backend_helpers_agree_with_raw_calls() {
    let b = MockBackend::new().unwrap();
    let text = "strong candidate, excellent";
    let raw = b.call(&BackendRequest::score(text, "polarity", 3)).unwrap().score.unwrap();
    assert_eq!(backend::score(&b, text, "polarity", 3).unwrap(), raw);
}
