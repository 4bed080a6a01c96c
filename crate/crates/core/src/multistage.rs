//! Repeated signaling episodes in which both players see the public interaction history.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::POSITIVE;
use crate::error::{Error, Result};
use crate::history::StageRecord;
use crate::metrics::{honest_probability, lie_probability, MetricsRow};
use crate::playout::Arena;
use crate::prompt::{evaluate_with_seed, PromptAction, PromptStrategy};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub episode: u64,
    pub seed: u64,
    pub horizon: usize,
    pub records: Vec<StageRecord>,
}

fn style_at(strategy: &PromptStrategy, history: &[StageRecord], seed: u64, stage: usize) -> Result<PromptAction> {
    match strategy {
        PromptStrategy::Action(a) => Ok(a.clone()),
        PromptStrategy::Function(f) => {
            evaluate_with_seed(f, history, Some(seed::derive(seed, &["fallback", &stage.to_string()])))
        }
    }
}

/// Plays `horizon` stages. States are drawn independently from the prior; the sender sees
/// the full history, the receiver only its public part.
pub fn run_episode(
    arena: &Arena,
    sender: &PromptStrategy,
    receiver: &PromptStrategy,
    horizon: usize,
    episode: u64,
    seed: u64,
) -> Result<Trajectory> {
    if horizon == 0 {
        return Err(Error::domain("episode horizon must be at least 1"));
    }
    let env = &arena.env;
    let inst = &env.base;
    let mut records: Vec<StageRecord> = Vec::with_capacity(horizon);
    let seed_tag = format!("{seed:016x}");
    for stage in 0..horizon {
        let outcome = (|| -> Result<StageRecord> {
            let stage_tag = stage.to_string();
            let mut rng = seed::rng(seed, &["stage", &stage_tag]);
            let w = env.draw_state(&mut rng);
            let state_id = &inst.states[w];
            let template = rng.gen_range(0..env.n_templates(state_id));
            let text = env.render_state(state_id, template, seed::derive(seed, &["render", &stage_tag]))?;
            let public: Vec<StageRecord> = records.iter().map(StageRecord::receiver_view).collect();
            let s_style = style_at(sender, &records, seed, stage)?;
            let r_style = style_at(receiver, &public, seed, stage)?;
            let parts = ["episode", seed_tag.as_str(), stage_tag.as_str()];
            let step = arena.step(w, &text, &s_style, &r_style, Some(&records), Some(&public), &parts)?;
            Ok(StageRecord {
                stage,
                state: state_id.clone(),
                signal: step.message,
                sender_recommendation: u8::from(step.label == POSITIVE),
                receiver_decision: u8::from(step.decision == POSITIVE),
                sender_reward: inst.u_sender[w][step.decision],
                receiver_reward: inst.u_receiver[w][step.decision],
                sender_prompt: step.sender_prompt,
                receiver_prompt: step.receiver_prompt,
            })
        })();
        match outcome {
            Ok(r) => records.push(r),
            Err(e) => {
                return Err(Error::Episode { episode, stage, completed: records, source: Box::new(e) });
            }
        }
    }
    Ok(Trajectory { episode, seed, horizon, records })
}

/// Runs episodes `0..n_seeds` in parallel; episode `k` uses a seed derived from `(base_seed, k)`.
pub fn run_batch(
    arena: &Arena,
    sender: &PromptStrategy,
    receiver: &PromptStrategy,
    horizon: usize,
    n_seeds: usize,
    base_seed: u64,
) -> Result<Vec<Trajectory>> {
    (0..n_seeds as u64)
        .into_par_iter()
        .map(|k| run_episode(arena, sender, receiver, horizon, k, seed::derive(base_seed, &["episode", &k.to_string()])))
        .collect()
}

pub fn to_jsonl(traj: &Trajectory) -> Result<String> {
    let mut out = String::new();
    for r in &traj.records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn from_jsonl(text: &str) -> Result<Vec<StageRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

pub fn trajectory_file_name(traj: &Trajectory) -> String {
    format!("episode_{}_seed_{}.jsonl", traj.episode, traj.seed)
}

/// Writes one JSONL file per episode under `dir` and returns the paths in episode order.
pub fn write_trajectories(dir: &Path, trajectories: &[Trajectory]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    trajectories
        .iter()
        .map(|t| {
            let path = dir.join(trajectory_file_name(t));
            crate::runs::write_atomic(&path, to_jsonl(t)?.as_bytes())?;
            Ok(path)
        })
        .collect()
}

/// Reads every `*.jsonl` file of `dir`, sorted by file name.
pub fn read_trajectories(dir: &Path) -> Result<Vec<Vec<StageRecord>>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    paths.iter().map(|p| from_jsonl(&fs::read_to_string(p)?)).collect()
}

/// Per-stage means over episodes.
pub fn stage_metrics(episodes: &[Vec<StageRecord>], env: &crate::env::VerbalizedEnv) -> Vec<MetricsRow> {
    let horizon = episodes.iter().map(Vec::len).max().unwrap_or(0);
    (0..horizon)
        .map(|t| {
            let at: Vec<StageRecord> = episodes.iter().filter_map(|e| e.get(t).cloned()).collect();
            let n = at.len().max(1) as f64;
            MetricsRow {
                iteration_or_stage: t,
                sender_reward: at.iter().map(|r| r.sender_reward).sum::<f64>() / n,
                receiver_reward: at.iter().map(|r| r.receiver_reward).sum::<f64>() / n,
                lie_prob: lie_probability(&at, env),
                honest_prob: honest_probability(&at, env),
                exploitability: None,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::MockBackend;
    use crate::env::make_rel;
    use crate::playout::{PlayOptions, Setting};
    use std::sync::Arc;

    fn arena() -> Arena {
        let opts = PlayOptions { setting: Setting::S3, ..PlayOptions::default() };
        Arena::new(make_rel().unwrap(), Arc::new(MockBackend::new().unwrap()), opts).unwrap()
    }

    fn act(c: &str, v: &str) -> PromptStrategy {
        PromptStrategy::Action(PromptAction::new(c, v).unwrap())
    }

    #[test]
    fn episodes_are_reproducible() {
        let a = arena();
        let s = act("Praise Intensity", "moderate");
        let r = act("Interpretation Style", "analytical");
        let x = run_episode(&a, &s, &r, 5, 0, 11).unwrap();
        let y = run_episode(&a, &s, &r, 5, 0, 11).unwrap();
        assert_eq!(to_jsonl(&x).unwrap(), to_jsonl(&y).unwrap());
        assert_eq!(x.records.len(), 5);
        for rec in &x.records {
            assert!([-1.0, 0.0, 1.0].contains(&rec.receiver_reward));
            assert!([0.0, 1.0].contains(&rec.sender_reward));
        }
    }

    #[test]
    fn receiver_prompt_hides_private_fields() {
        let a = arena();
        let t = run_episode(&a, &act("Tone", "neutral"), &act("Interpretation Style", "literal"), 3, 0, 5).unwrap();
        let last = &t.records[2].receiver_prompt;
        assert!(!last.contains("state="));
        assert!(!last.contains("STATE:"));
        assert!(t.records[2].sender_prompt.contains("state="));
    }

    #[test]
    fn zero_horizon_is_rejected() {
        let a = arena();
        assert!(run_episode(&a, &act("Tone", "neutral"), &act("Tone", "neutral"), 0, 0, 1).is_err());
    }

    #[test]
    fn jsonl_round_trip_keeps_key_names() {
        let a = arena();
        let t = run_episode(&a, &act("Tone", "neutral"), &act("Interpretation Style", "literal"), 2, 3, 9).unwrap();
        let text = to_jsonl(&t).unwrap();
        for key in ["sender_recommendation", "receiver_decision", "sender_reward", "receiver_reward"] {
            assert!(text.contains(&format!("\"{key}\"")));
        }
        assert_eq!(from_jsonl(&text).unwrap(), t.records);
        assert_eq!(trajectory_file_name(&t), "episode_3_seed_9.jsonl");
    }
}
