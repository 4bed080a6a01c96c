//! Lie and honesty rates, metric rows and their CSV form.

use serde::{Deserialize, Serialize};

use rand::Rng;

use crate::backend;
use crate::env::{VerbalizedEnv, NEGATIVE, POSITIVE};
use crate::error::Result;
use crate::game::SignalingScheme;
use crate::history::StageRecord;
use crate::messages;
use crate::oracles::polarize;
use crate::playout::Arena;
use crate::prompt::PromptAction;
use crate::seed;

/// One row of `metrics.csv`. Rates are absent when the conditioning state never occurred.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iteration_or_stage: usize,
    pub sender_reward: f64,
    pub receiver_reward: f64,
    pub lie_prob: Option<f64>,
    pub honest_prob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exploitability: Option<f64>,
}

pub const METRICS_HEADER: &str = "iteration_or_stage,sender_reward,receiver_reward,lie_prob,honest_prob";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.iteration_or_stage,
            self.sender_reward,
            self.receiver_reward,
            opt(self.lie_prob),
            opt(self.honest_prob)
        )
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    out
}

fn rate(hits: f64, total: f64) -> Option<f64> {
    (total > 0.0).then(|| (hits / total).clamp(0.0, 1.0))
}

/// Share of negative-state occurrences signalled as the positive extreme.
pub fn lie_probability(records: &[StageRecord], env: &VerbalizedEnv) -> Option<f64> {
    let negative = &env.base.states[NEGATIVE];
    let (hits, total) = records
        .iter()
        .filter(|r| &r.state == negative)
        .fold((0.0, 0.0), |(h, t), r| (h + f64::from(r.sender_recommendation), t + 1.0));
    rate(hits, total)
}

/// Share of positive-state occurrences signalled as the positive extreme.
pub fn honest_probability(records: &[StageRecord], env: &VerbalizedEnv) -> Option<f64> {
    let positive = &env.base.states[POSITIVE];
    let (hits, total) = records
        .iter()
        .filter(|r| &r.state == positive)
        .fold((0.0, 0.0), |(h, t), r| (h + f64::from(r.sender_recommendation), t + 1.0));
    rate(hits, total)
}

/// Lie and honesty rates from a `[state][label]` mass table.
pub fn rates_from_mass(label_mass: &[Vec<f64>]) -> (Option<f64>, Option<f64>) {
    let row = |w: usize| label_mass.get(w).map_or((0.0, 0.0), |r| (r[POSITIVE], r.iter().sum()));
    let (lie_hits, neg_total) = row(NEGATIVE);
    let (honest_hits, pos_total) = row(POSITIVE);
    (rate(lie_hits, neg_total), rate(honest_hits, pos_total))
}

/// Samples a recommendation from `scheme` for each drawn state, has the backend write a
/// message in a positive or negative tone accordingly, and measures the lie and honesty
/// rates of the polarized messages.
pub fn scheme_playout_rates(arena: &Arena, scheme: &SignalingScheme, samples: usize) -> Result<(Option<f64>, Option<f64>)> {
    let env = &arena.env;
    let inst = &env.base;
    let base = arena.options.seed;
    let tone = |positive: bool| PromptAction::new("Tone", if positive { "positive" } else { "negative" });
    let mut mass = vec![vec![0.0; inst.n_signals()]; inst.n_states()];
    for k in 0..samples {
        let ks = k.to_string();
        let mut rng = seed::rng(base, &["scheme", &ks]);
        for (m, w) in env.draw_states(&mut rng).into_iter().enumerate() {
            let ms = m.to_string();
            let u: f64 = rng.gen();
            let recommended = if u < scheme.prob(w, POSITIVE) { POSITIVE } else { NEGATIVE };
            let state_id = &inst.states[w];
            let template = rng.gen_range(0..env.n_templates(state_id));
            let text = env.render_state(state_id, template, seed::derive(base, &["render", &ks, &ms]))?;
            let prompt = messages::sender_prompt(env, &tone(recommended == POSITIVE)?, state_id, &text, None);
            let message = backend::complete(arena.backend(), &prompt, seed::derive(base, &["sender", &ks, &ms]))?;
            let label = polarize(&message, env, arena.backend(), seed::derive(base, &["polarize", &ks, &ms]))?;
            mass[w][label] += 1.0;
        }
    }
    Ok(rates_from_mass(&mass))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{make_cor, make_rel};
    use crate::history::record;

    fn with_state(state: &str, rec: u8) -> StageRecord {
        StageRecord { state: state.into(), ..record(0, rec, 0.0, 0.0) }
    }

    #[test]
    fn counts() {
        let env = make_rel().unwrap();
        let recs: Vec<_> = [1, 0, 1, 0].iter().map(|&r| with_state("weak", r)).collect();
        assert_eq!(lie_probability(&recs, &env), Some(0.5));
        assert_eq!(honest_probability(&recs, &env), None);
        let cor = make_cor().unwrap();
        let recs: Vec<_> = [1, 1, 1, 0].iter().map(|&r| with_state("guilty", r)).collect();
        assert_eq!(honest_probability(&recs, &cor), Some(0.75));
        assert_eq!(lie_probability(&recs, &cor), None);
    }

    #[test]
    fn mass_rates() {
        let (lie, honest) = rates_from_mass(&[vec![0.3, 0.0], vec![0.3, 0.4]]);
        assert!((lie.unwrap() - 3.0 / 7.0).abs() < 1e-12);
        assert_eq!(honest, Some(1.0));
    }

    #[test]
    fn csv_leaves_absent_rates_empty() {
        let row = MetricsRow {
            iteration_or_stage: 2,
            sender_reward: 0.5,
            receiver_reward: 0.25,
            lie_prob: None,
            honest_prob: Some(1.0),
            exploitability: None,
        };
        assert_eq!(row.csv_line(), "2,0.5,0.25,,1");
        assert!(metrics_csv(&[row]).starts_with(METRICS_HEADER));
    }
}
