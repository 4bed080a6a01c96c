//! Acceptance suite: one pass/fail line per criterion, with the tolerances pinned here.

use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vbp_core::backend::{Backend, BackendRequest, CachedBackend, MockBackend};
use vbp_core::env::{analytic_equilibrium, EnvId, EnvSpec, VerbalizedEnv, NEGATIVE, POSITIVE};
use vbp_core::game::{expected_utilities, obedience_violation, BpInstance, ReceiverPolicy, SignalingScheme};
use vbp_core::messages;
use vbp_core::metrics::{metrics_csv, scheme_playout_rates};
use vbp_core::multistage::{read_trajectories, run_batch, stage_metrics, to_jsonl, write_trajectories};
use vbp_core::oracles::{
    categorical_search, exact_best_response, polarize, receiver_catalog, sender_catalog, shaped_value, OracleBudget,
};
use vbp_core::playout::{Arena, PlayOptions, Player, Setting, Strategy};
use vbp_core::prompt::{rel_listing_rules, PromptAction, PromptStrategy};
use vbp_core::psro::{run_psro, OracleKind, PsroConfig, PsroResult};
use vbp_core::solver::{binary_search_optimal, solve_direct_lp};

const ENVS: [EnvId; 3] = [EnvId::Rel, EnvId::Cor, EnvId::Lae];

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn env(id: EnvId) -> VerbalizedEnv {
    EnvSpec::new(id).build().unwrap()
}

fn arena(id: EnvId, options: PlayOptions) -> Arena {
    Arena::new(env(id), Arc::new(MockBackend::new().unwrap()), options).unwrap()
}

fn exact_psro(id: EnvId) -> PsroResult {
    run_psro(&arena(id, PlayOptions::default()), &PsroConfig::default(), &mut |_| Ok(())).unwrap()
}

fn meta_scheme(res: &PsroResult) -> SignalingScheme {
    let schemes: Vec<&SignalingScheme> = res.sender_pool.iter().filter_map(Strategy::as_scheme).collect();
    let total: f64 = res.meta.sender.iter().sum();
    let w: Vec<f64> = res.meta.sender.iter().map(|x| x / total).collect();
    SignalingScheme::mixture(&schemes, &w).unwrap()
}

fn c1_cor_exact() -> Outcome {
    let t = Instant::now();
    let sol = solve_direct_lp(&env(EnvId::Cor).base).map_err(|e| e.to_string())?;
    let el = t.elapsed();
    let (v, lie, honest) = (sol.sender_value, sol.scheme.prob(NEGATIVE, POSITIVE), sol.scheme.prob(POSITIVE, POSITIVE));
    check(
        (v - 0.6).abs() <= 1e-9 && (lie - 3.0 / 7.0).abs() <= 1e-9 && (honest - 1.0).abs() <= 1e-9 && el < Duration::from_secs(1),
        format!("value {v:.12}, convict|innocent {lie:.12}, convict|guilty {honest:.12}, {el:?}"),
    )
}

fn c2_rel_exact() -> Outcome {
    let spec = EnvSpec::new(EnvId::Rel);
    let inst = env(EnvId::Rel).base;
    let sol = solve_direct_lp(&inst).map_err(|e| e.to_string())?;
    let (v, lie) = (sol.sender_value, sol.scheme.prob(NEGATIVE, POSITIVE));
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let obedient = ReceiverPolicy::obedient(2).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let eps: f64 = rng.gen_range(0.0..=0.5);
        let scheme = SignalingScheme::direct(vec![vec![1.0, 0.0], vec![eps, 1.0 - eps]]).unwrap();
        let e = expected_utilities(&inst, &scheme, &obedient).unwrap();
        let a = analytic_equilibrium(&spec, eps).unwrap();
        worst = worst.max((e.sender - a.sender).abs()).max((e.receiver - a.receiver).abs());
    }
    check(
        (v - 2.0 / 3.0).abs() <= 1e-9 && (lie - 0.5).abs() <= 1e-9 && worst <= 1e-12,
        format!("value {v:.12}, hire|weak {lie:.12}, analytic max error {worst:.2e}"),
    )
}

fn c3_lae_exact() -> Outcome {
    let t = Instant::now();
    let sol = solve_direct_lp(&env(EnvId::Lae).base).map_err(|e| e.to_string())?;
    let el = t.elapsed();
    let lie = sol.scheme.prob(NEGATIVE, POSITIVE);
    check(
        (lie - 0.4).abs() <= 1e-6 && (sol.receiver_value - 0.2).abs() <= 1e-9 && el < Duration::from_secs(1),
        format!("lie {lie:.12}, driver value {:.12}, {el:?}", sol.receiver_value),
    )
}

fn random_instance(rng: &mut ChaCha8Rng) -> BpInstance {
    let ns = rng.gen_range(2..=3);
    let na = rng.gen_range(2..=3);
    let raw: Vec<f64> = (0..ns).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut prior: Vec<f64> = raw.iter().map(|p| p / total).collect();
    let head: f64 = prior[..ns - 1].iter().sum();
    prior[ns - 1] = 1.0 - head;
    let mut table = || (0..ns).map(|_| (0..na).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let names = |p: &str, n: usize| (0..n).map(|i| format!("{p}{i}")).collect::<Vec<_>>();
    BpInstance::new("random", names("w", ns), names("a", na), names("a", na), prior, table(), table()).unwrap()
}

fn c4_cross_validation() -> Outcome {
    let t = Instant::now();
    let tol = 1e-3;
    let mut worst: f64 = 0.0;
    let mut insts: Vec<BpInstance> = ENVS.iter().map(|&id| env(id).base).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    insts.extend((0..100).map(|_| random_instance(&mut rng)));
    for inst in &insts {
        let lp = solve_direct_lp(inst).map_err(|e| e.to_string())?;
        let bs = binary_search_optimal(inst, tol).map_err(|e| e.to_string())?;
        worst = worst.max((lp.sender_value - bs.sender_value).abs());
    }
    let el = t.elapsed();
    check(worst <= 2.0 * tol && el < Duration::from_secs(30), format!("{} instances, max gap {worst:.2e}, {el:?}", insts.len()))
}

fn c5_psro_convergence() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for id in ENVS {
        let t = Instant::now();
        let a = exact_psro(id);
        let el = t.elapsed();
        let b = exact_psro(id);
        let same = serde_json::to_string(&a.iterations).unwrap() == serde_json::to_string(&b.iterations).unwrap();
        let last = a.final_exploitability().unwrap_or(f64::INFINITY);
        ok &= last <= 0.05 && a.iterations.len() <= 10 && same && el < Duration::from_secs(60);
        parts.push(format!("{id}: {} iterations, final {last:.2e}, reproducible {same}, {el:?}", a.iterations.len()));
    }
    check(ok, parts.join("; "))
}

fn c6_metrics() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for id in ENVS {
        let res = exact_psro(id);
        let pi = meta_scheme(&res);
        let a = arena(id, PlayOptions { seed: 6, ..PlayOptions::default() });
        let (lie, honest) = scheme_playout_rates(&a, &pi, 2000).map_err(|e| e.to_string())?;
        let eps = analytic_equilibrium(&EnvSpec::new(id), 0.0).unwrap().eps_star;
        let (lie, honest) = (lie.unwrap_or(f64::NAN), honest.unwrap_or(f64::NAN));
        ok &= (lie - eps).abs() <= 0.05 && (honest - 1.0).abs() <= 0.02;
        parts.push(format!("{id}: lie {lie:.4} (target {eps:.4}), honest {honest:.4}"));
    }
    check(ok, parts.join("; "))
}

fn c7_obedience() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for id in ENVS {
        let e = env(id);
        worst = worst.max(solve_direct_lp(&e.base).unwrap().max_violation);
        let mut opponents = vec![
            ReceiverPolicy::obedient(2).unwrap(),
            ReceiverPolicy::constant(2, 2, NEGATIVE).unwrap(),
            ReceiverPolicy::constant(2, 2, POSITIVE).unwrap(),
        ];
        for _ in 0..10 {
            let p: f64 = rng.gen();
            let q: f64 = rng.gen();
            opponents.push(ReceiverPolicy::new(vec![vec![p, 1.0 - p], vec![q, 1.0 - q]]).unwrap());
        }
        for rho in opponents {
            let br = exact_best_response(&e, Player::Sender, &[(Strategy::Policy(rho), 1.0)]).unwrap();
            worst = worst.max(obedience_violation(&e.base, br.strategy.as_scheme().unwrap()).unwrap());
        }
        worst = worst.max(obedience_violation(&e.base, &meta_scheme(&exact_psro(id))).unwrap());
    }
    check(worst <= 1e-6, format!("largest violation {worst:.2e}"))
}

fn search_psro(seed: u64, commitment: bool, obedience: bool) -> (f64, f64) {
    let options = PlayOptions { seed, commitment, obedience, samples: 40, ..PlayOptions::default() };
    let cfg = PsroConfig { oracle: OracleKind::Search, ..PsroConfig::default() };
    let res = run_psro(&arena(EnvId::Rel, options), &cfg, &mut |_| Ok(())).unwrap();
    let last = res.iterations.last().unwrap();
    (last.lie_prob.unwrap_or(f64::NAN), last.honest_prob.unwrap_or(f64::NAN))
}

fn c8_ablations() -> Outcome {
    let seeds: Vec<u64> = (0..20).collect();
    let mut sums = [0.0f64; 5];
    for &s in &seeds {
        let (full, _) = search_psro(s, true, true);
        let (no_commit, h_commit) = search_psro(s, false, true);
        let (no_obed, h_obed) = search_psro(s, true, false);
        sums[0] += (no_obed - full).abs();
        sums[1] += (no_commit - full).abs();
        sums[2] += h_commit;
        sums[3] += h_obed;
        sums[4] += full;
    }
    let n = seeds.len() as f64;
    let [d_obed, d_commit, h_commit, h_obed, full] = sums.map(|v| v / n);
    check(
        d_obed > d_commit && h_commit >= 0.95 && h_obed >= 0.95,
        format!(
            "full lie {full:.3}; mean shift without obedience {d_obed:.3}, without commitment {d_commit:.3}; honest {h_obed:.3} / {h_commit:.3}"
        ),
    )
}

fn c9_multistage() -> Outcome {
    let options = PlayOptions { setting: Setting::S3, ..PlayOptions::default() };
    let rules = rel_listing_rules();
    let sender = PromptStrategy::Function(rules.iter().find(|r| r.rule_id == "rel_sender_trend").unwrap().clone());
    let receiver = PromptStrategy::Function(rules.iter().find(|r| r.rule_id == "rel_receiver_trend").unwrap().clone());
    let run = || run_batch(&arena(EnvId::Rel, options.clone()), &sender, &receiver, 5, 20, 9).unwrap();
    let (x, y) = (run(), run());
    let text = |t: &[vbp_core::multistage::Trajectory]| t.iter().map(|t| to_jsonl(t).unwrap()).collect::<String>();
    let identical = text(&x) == text(&y);
    let dir = tempfile::tempdir().unwrap();
    write_trajectories(dir.path(), &x).unwrap();
    let stored = read_trajectories(dir.path()).unwrap();
    let e = env(EnvId::Rel);
    let live: Vec<_> = x.iter().map(|t| t.records.clone()).collect();
    let csv_live = metrics_csv(&stage_metrics(&live, &e));
    let csv_stored = metrics_csv(&stage_metrics(&stored, &e));
    let rows = csv_live.lines().count() - 1;
    check(
        identical && csv_live == csv_stored && rows == 5 && x.iter().all(|t| t.records.len() == 5),
        format!("{} episodes, JSONL identical {identical}, CSV regenerated identically {}", x.len(), csv_live == csv_stored),
    )
}

fn mock_requests(e: &VerbalizedEnv) -> Vec<BackendRequest> {
    let style = PromptAction::new("Tone", "neutral").unwrap();
    let state = &e.base.states[NEGATIVE];
    let text = e.render_state(state, 0, 1).unwrap();
    let candidates: Vec<String> = sender_catalog(e).iter().map(PromptAction::to_dict).collect();
    let mut reqs: Vec<BackendRequest> = (0..20)
        .map(|k| BackendRequest::complete(messages::sender_prompt(e, &style, state, &text, None), k))
        .collect();
    reqs.push(BackendRequest::complete(messages::predict_prompt(e, &e.base.actions[0]), 3));
    reqs.push(BackendRequest::complete(messages::propose_prompt(e, "sender", 8, &candidates, &[]), 4));
    reqs.push(BackendRequest::complete(messages::obfuscate_prompt(e, "a capable and solid record", &text), 5));
    reqs.push(BackendRequest::score("an outstanding and capable record", "polarity", 6));
    reqs.push(BackendRequest::classify("unreliable, struggled", &e.classification_labels, 7));
    reqs
}

fn c10_substitutes() -> Outcome {
    // determinism of the mock backend, with and without the cache
    let mut deterministic = true;
    for id in ENVS {
        let e = env(id);
        let (a, b) = (MockBackend::new().unwrap(), MockBackend::new().unwrap());
        let cached = CachedBackend::new(Arc::new(MockBackend::new().unwrap()));
        for r in mock_requests(&e) {
            let x = a.call(&r).unwrap();
            deterministic &= x == b.call(&r).unwrap() && x == a.call(&r).unwrap() && x == cached.call(&r).unwrap();
        }
    }
    // search argmax against exhaustive enumeration
    let mut argmax_matches = true;
    let a = arena(EnvId::Rel, PlayOptions { samples: 30, ..PlayOptions::default() });
    let rel = env(EnvId::Rel);
    let budget = OracleBudget { proposals_per_step: 8, steps: 4, top_k_context: 10 };
    let literal = PromptAction::new("Interpretation Style", "literal").unwrap();
    let strict = PromptAction::new("Decision Threshold", "strict").unwrap();
    let neutral = PromptAction::new("Tone", "neutral").unwrap();
    let high = PromptAction::new("Praise Intensity", "high").unwrap();
    let cases = [
        (Player::Sender, vec![(Strategy::action(literal.clone()), 0.7), (Strategy::action(strict), 0.3)], sender_catalog(&rel)),
        (Player::Receiver, vec![(Strategy::action(neutral), 0.5), (Strategy::action(high), 0.5)], receiver_catalog(&rel)),
    ];
    for (player, opponents, family) in &cases {
        assert!(family.len() <= 64);
        let br = categorical_search(&a, *player, opponents, &budget, 0, &mut Vec::new()).unwrap();
        let value = |c: &PromptAction| -> f64 {
            opponents
                .iter()
                .map(|(o, w)| {
                    let c = Strategy::action(c.clone());
                    let v = match player {
                        Player::Sender => shaped_value(&a, &c, o, *player),
                        Player::Receiver => shaped_value(&a, o, &c, *player),
                    };
                    w * v.unwrap()
                })
                .sum()
        };
        let mut scored: Vec<(f64, &PromptAction)> = family.iter().map(|c| (value(c), c)).collect();
        let top = scored.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
        scored.retain(|s| (s.0 - top).abs() <= 1e-12);
        let best = scored.iter().map(|s| s.1).min_by(|x, y| (&x.category, &x.content).cmp(&(&y.category, &y.content))).unwrap();
        argmax_matches &= (br.value - top).abs() <= 1e-12 && br.strategy == Strategy::action(best.clone());
    }
    // polarization idempotence on the extreme letter fixtures
    let mut idempotent = true;
    let mock = MockBackend::new().unwrap();
    for id in ENVS {
        let e = env(id);
        for state in &e.base.states {
            for positive in [true, false] {
                let letter = mock.rules().letter(state, positive).unwrap();
                let label = polarize(letter, &e, &mock, 1).unwrap();
                let again = polarize(mock.rules().letter(state, label == POSITIVE).unwrap(), &e, &mock, 2).unwrap();
                idempotent &= label == if positive { POSITIVE } else { NEGATIVE } && again == label;
            }
        }
    }
    check(
        deterministic && argmax_matches && idempotent,
        format!("mock deterministic {deterministic}, search matches enumeration {argmax_matches}, polarization idempotent {idempotent}"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("C1 COR exact equilibrium", c1_cor_exact),
        ("C2 REL exact equilibrium", c2_rel_exact),
        ("C3 LAE lie rate and driver value", c3_lae_exact),
        ("C4 LP and bisection agree", c4_cross_validation),
        ("C5 exact PSRO convergence", c5_psro_convergence),
        ("C6 lie and honesty at the learned equilibrium", c6_metrics),
        ("C7 obedience of returned schemes", c7_obedience),
        ("C8 ablation directions", c8_ablations),
        ("C9 multistage reproducibility", c9_multistage),
        ("C10 substitute property checks", c10_substitutes),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} {name}: {detail} [{:.1}s]", t.elapsed().as_secs_f64());
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
