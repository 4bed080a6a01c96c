//! Best-response oracles and the message operators used during play: polarization,
//! obfuscation rewriting and the obedience check.

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{self, Backend, MockRules};
use crate::env::{VerbalizedEnv, NEGATIVE, POSITIVE};
use crate::error::{Error, Result};
use crate::game::{expected_utilities, ReceiverPolicy, SignalingScheme};
use crate::messages::{self, parse_decision};
use crate::playout::{Arena, Player, Strategy};
use crate::prompt::{rel_listing_rules, PromptAction, PromptFunction, PromptStrategy};
use crate::seed;
use crate::solver::solve_direct_lp;

/// Maps a message to the signal extreme it points to, using the backend's polarity score.
pub fn polarize(text: &str, _env: &VerbalizedEnv, b: &dyn Backend, seed: u64) -> Result<usize> {
    let s = backend::score(b, text, "polarity", seed)?;
    Ok(if s >= 0.5 { POSITIVE } else { NEGATIVE })
}

/// Rewrites `message` up to `rounds` times, keeping a rewrite only when it scores strictly
/// better on obfuscation and still polarizes to the same signal.
pub fn obfuscation_refine(
    message: &str,
    state_text: &str,
    rounds: usize,
    env: &VerbalizedEnv,
    b: &dyn Backend,
    seed: u64,
) -> Result<String> {
    let mut current = message.to_owned();
    if rounds == 0 {
        return Ok(current);
    }
    let label = polarize(&current, env, b, seed)?;
    let mut best = backend::score(b, &current, "obfuscation", seed)?;
    for r in 0..rounds {
        let rs = r.to_string();
        let prompt = messages::obfuscate_prompt(env, &current, state_text);
        let candidate = backend::complete(b, &prompt, seed::derive(seed, &["rewrite", &rs]))?;
        if candidate.trim().is_empty() {
            continue;
        }
        let s = backend::score(b, &candidate, "obfuscation", seed)?;
        if s > best && polarize(&candidate, env, b, seed)? == label {
            best = s;
            current = candidate;
        }
    }
    Ok(current)
}

/// Signed receiver gain from deviating to the action the backend predicts, given that
/// `recommended` was advised in `state`.
pub fn obedience_term(env: &VerbalizedEnv, state: usize, recommended: usize, b: &dyn Backend, seed: u64) -> Result<f64> {
    let inst = &env.base;
    let reply = backend::complete(b, &messages::predict_prompt(env, &inst.actions[recommended]), seed)?;
    let predicted = parse_decision(env, &reply)?;
    Ok(inst.u_receiver[state][predicted] - inst.u_receiver[state][recommended])
}

pub fn obedience_penalty(env: &VerbalizedEnv, state: usize, recommended: usize, b: &dyn Backend, seed: u64) -> Result<f64> {
    Ok(obedience_term(env, state, recommended, b, seed)?.max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestResponse {
    pub strategy: Strategy,
    pub value: f64,
}

/// Best obedient scheme against a receiver mixture, whose behavior after each
/// recommendation is folded into the sender's utility.
pub fn exact_sender_response(env: &VerbalizedEnv, rho: &ReceiverPolicy) -> Result<BestResponse> {
    let mut induced = env.base.clone();
    let na = induced.n_actions();
    if rho.n_signals() != na || rho.n_actions() != na {
        return Err(Error::shape("receiver mixture must map recommendations to actions"));
    }
    for (w, row) in induced.u_sender.iter_mut().enumerate() {
        for (a, u) in row.iter_mut().enumerate() {
            *u = (0..na).map(|b| rho.prob(a, b) * env.base.u_sender[w][b]).sum();
        }
    }
    let sol = solve_direct_lp(&induced)?;
    let value = expected_utilities(&env.base, &sol.scheme, rho)?.sender;
    Ok(BestResponse { strategy: Strategy::Scheme(sol.scheme), value })
}

pub fn exact_receiver_response(env: &VerbalizedEnv, pi: &SignalingScheme) -> Result<BestResponse> {
    let policy = ReceiverPolicy::best_response(&env.base, pi)?;
    let value = expected_utilities(&env.base, pi, &policy)?.receiver;
    Ok(BestResponse { strategy: Strategy::Policy(policy), value })
}

/// Exact response of `player` to a weighted pool of opponent schemes or policies.
pub fn exact_best_response(env: &VerbalizedEnv, player: Player, opponents: &[(Strategy, f64)]) -> Result<BestResponse> {
    if opponents.is_empty() {
        return Err(Error::domain("opponent pool is empty"));
    }
    let total: f64 = opponents.iter().map(|(_, w)| w.max(0.0)).sum();
    if !(total > 0.0) {
        return Err(Error::domain("opponent meta-strategy has no mass"));
    }
    let weights: Vec<f64> = opponents.iter().map(|(_, w)| w.max(0.0) / total).collect();
    let kind = || Error::domain("exact responses need schemes and policies as opponents");
    match player {
        Player::Sender => {
            let policies = opponents.iter().map(|(s, _)| s.as_policy().ok_or_else(kind)).collect::<Result<Vec<_>>>()?;
            exact_sender_response(env, &ReceiverPolicy::mixture(&policies, &weights)?)
        }
        Player::Receiver => {
            let schemes = opponents.iter().map(|(s, _)| s.as_scheme().ok_or_else(kind)).collect::<Result<Vec<_>>>()?;
            exact_receiver_response(env, &SignalingScheme::mixture(&schemes, &weights)?)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleBudget {
    pub proposals_per_step: usize,
    pub steps: usize,
    pub top_k_context: usize,
}

impl Default for OracleBudget {
    fn default() -> Self {
        OracleBudget { proposals_per_step: 8, steps: 3, top_k_context: 10 }
    }
}

impl OracleBudget {
    pub fn validate(&self) -> Result<()> {
        if self.proposals_per_step == 0 || self.steps == 0 || self.top_k_context == 0 {
            return Err(Error::domain("oracle budget entries must be positive"));
        }
        Ok(())
    }
}

/// One scored candidate of a search oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub player: Player,
    pub step: usize,
    pub candidate: String,
    pub score: f64,
    pub accepted: bool,
}

/// Value of a cell for `player`; the sender's is shaped by the obedience penalty when enabled.
pub fn shaped_value(arena: &Arena, sender: &Strategy, receiver: &Strategy, player: Player) -> Result<f64> {
    let c = arena.cell(sender, receiver)?;
    Ok(match player {
        Player::Sender if arena.options.obedience => c.sender - arena.options.penalty_coef * c.penalty(),
        p => c.payoff(p),
    })
}

fn mixture_value(arena: &Arena, player: Player, candidate: &Strategy, opponents: &[(Strategy, f64)]) -> Result<f64> {
    opponents.iter().filter(|(_, w)| *w > 0.0).try_fold(0.0, |acc, (opp, w)| {
        let v = match player {
            Player::Sender => shaped_value(arena, candidate, opp, player)?,
            Player::Receiver => shaped_value(arena, opp, candidate, player)?,
        };
        Ok(acc + w * v)
    })
}

pub fn sender_catalog(env: &VerbalizedEnv) -> Vec<PromptAction> {
    MockRules::shared()
        .sender_styles(env.id)
        .iter()
        .filter_map(|s| PromptAction::new(&s.category, &s.content).ok())
        .collect()
}

pub fn receiver_catalog(env: &VerbalizedEnv) -> Vec<PromptAction> {
    MockRules::shared()
        .receiver_styles(env.id)
        .iter()
        .filter_map(|s| PromptAction::new(&s.category, &s.content).ok())
        .collect()
}

fn catalog(env: &VerbalizedEnv, player: Player) -> Vec<PromptAction> {
    match player {
        Player::Sender => sender_catalog(env),
        Player::Receiver => receiver_catalog(env),
    }
}

const SENDER_FEATURES: &[&str] = &[
    "consecutive_sender_rewards",
    "consecutive_accepts",
    "avg_receiver_accepts",
    "avg_sender_rewards",
    "weighted_acceptance_score",
    "weighted_sender_score",
    "avg_sender_reward_delta",
];

const RECEIVER_FEATURES: &[&str] = &[
    "consecutive_receiver_rewards",
    "consecutive_receiver_penalties",
    "avg_receiver_rewards",
    "avg_sender_recommendations",
    "weighted_recommendation_score",
    "weighted_receiver_score",
    "avg_receiver_reward_delta",
];

fn template_for(feature: &str) -> (&'static str, &'static [f64]) {
    if feature.starts_with("consecutive") {
        ("streak_switch", &[1.0, 2.0])
    } else if feature.ends_with("_delta") {
        ("delta_trend", &[0.0])
    } else if feature.starts_with("weighted") {
        ("weighted_score", &[0.3, 0.6])
    } else {
        ("average_threshold", &[0.3, 0.6])
    }
}

/// Candidate history-dependent strategies for `player`: every catalog style as a constant,
/// the fixed listing rules in the letter environment, and threshold rules over the first
/// four styles.
pub fn function_family(env: &VerbalizedEnv, player: Player) -> Result<Vec<PromptFunction>> {
    let styles = catalog(env, player);
    let mut out: Vec<PromptFunction> = styles.iter().cloned().map(PromptFunction::constant).collect();
    if env.id == crate::env::EnvId::Rel {
        let prefix = format!("rel_{player}_");
        out.extend(rel_listing_rules().into_iter().filter(|f| f.rule_id.starts_with(&prefix)));
    }
    let features = match player {
        Player::Sender => SENDER_FEATURES,
        Player::Receiver => RECEIVER_FEATURES,
    };
    let head = &styles[..styles.len().min(4)];
    for feature in features {
        let (rule, thresholds) = template_for(feature);
        for &t in thresholds {
            for (i, a) in head.iter().enumerate() {
                for (j, b) in head.iter().enumerate() {
                    if i != j {
                        out.push(PromptFunction::template(rule, feature, t, a.clone(), b.clone())?);
                    }
                }
            }
        }
    }
    Ok(out)
}

fn proposal_json(s: &PromptStrategy) -> Result<String> {
    Ok(match s {
        PromptStrategy::Action(a) => a.to_dict(),
        PromptStrategy::Function(f) => serde_json::to_string(f)?,
    })
}

fn normalize(json: &str) -> Option<String> {
    serde_json::from_str::<serde_json::Value>(json).ok().map(|v| v.to_string())
}

fn tiebreak(s: &PromptStrategy) -> String {
    match s {
        PromptStrategy::Action(a) => format!("{}\u{0}{}", a.category, a.content),
        PromptStrategy::Function(f) => f.key(),
    }
}

fn beats(score: f64, s: &PromptStrategy, best: &Option<(PromptStrategy, f64)>) -> bool {
    match best {
        None => true,
        Some((b, v)) if (score - v).abs() <= 1e-12 => tiebreak(s) < tiebreak(b),
        Some((_, v)) => score > *v,
    }
}

/// Backend-guided search over a finite family: each step asks the backend for new
/// candidates given the best ones so far, then scores them against the opponent mixture.
pub fn prompt_search(
    arena: &Arena,
    player: Player,
    family: &[PromptStrategy],
    opponents: &[(Strategy, f64)],
    cfg: &OracleBudget,
    iteration: usize,
    trace: &mut Vec<TraceEntry>,
) -> Result<BestResponse> {
    cfg.validate()?;
    let mut index: BTreeMap<String, &PromptStrategy> = BTreeMap::new();
    for s in family {
        let key = normalize(&proposal_json(s)?).ok_or_else(|| Error::Internal("unserializable candidate".into()))?;
        index.insert(key, s);
    }
    let mut seen: HashSet<String> = HashSet::new();
    let mut scored: Vec<(String, f64)> = Vec::new();
    let mut best: Option<(PromptStrategy, f64)> = None;
    let it = iteration.to_string();
    for step in 0..cfg.steps {
        let remaining: Vec<String> = index.keys().filter(|k| !seen.contains(*k)).cloned().collect();
        if remaining.is_empty() {
            break;
        }
        let mut top = scored.clone();
        top.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        top.truncate(cfg.top_k_context);
        let role = player.to_string();
        let prompt = messages::propose_prompt(&arena.env, &role, cfg.proposals_per_step, &remaining, &top);
        let reply = backend::complete(
            arena.backend(),
            &prompt,
            seed::derive(arena.options.seed, &["propose", &role, &it, &step.to_string()]),
        )?;
        let mut picks: Vec<(String, PromptStrategy)> = Vec::new();
        for v in messages::parse_proposals(&reply) {
            let key = v.to_string();
            if let Some(s) = index.get(&key) {
                if seen.insert(key.clone()) {
                    picks.push((key, (*s).clone()));
                }
            }
        }
        let scores: Vec<f64> = picks
            .par_iter()
            .map(|(_, s)| mixture_value(arena, player, &Strategy::Prompt(s.clone()), opponents))
            .collect::<Result<_>>()?;
        for ((key, s), score) in picks.into_iter().zip(scores) {
            let accepted = beats(score, &s, &best);
            trace.push(TraceEntry { iteration, player, step, candidate: key.clone(), score, accepted });
            if accepted {
                best = Some((s, score));
            }
            scored.push((key, score));
        }
    }
    best.map(|(s, value)| BestResponse { strategy: Strategy::Prompt(s), value })
        .ok_or_else(|| Error::Backend("search oracle found no valid candidate".into()))
}

/// Search over single prompt actions (one-shot settings).
pub fn categorical_search(
    arena: &Arena,
    player: Player,
    opponents: &[(Strategy, f64)],
    cfg: &OracleBudget,
    iteration: usize,
    trace: &mut Vec<TraceEntry>,
) -> Result<BestResponse> {
    let family: Vec<PromptStrategy> = catalog(&arena.env, player).into_iter().map(PromptStrategy::Action).collect();
    prompt_search(arena, player, &family, opponents, cfg, iteration, trace)
}

/// Search over history-dependent prompt functions (repeated setting).
pub fn conditional_search(
    arena: &Arena,
    player: Player,
    opponents: &[(Strategy, f64)],
    cfg: &OracleBudget,
    iteration: usize,
    trace: &mut Vec<TraceEntry>,
) -> Result<BestResponse> {
    if arena.options.horizon <= 1 {
        return Err(Error::domain("conditional search needs a horizon of at least 2"));
    }
    let family: Vec<PromptStrategy> =
        function_family(&arena.env, player)?.into_iter().map(PromptStrategy::Function).collect();
    prompt_search(arena, player, &family, opponents, cfg, iteration, trace)
}
