//! Evaluation of strategy pairs: exact expectations for schemes and policies, sampled
//! playouts through the language-model backend for prompt strategies.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{self, Backend};
use crate::env::{VerbalizedEnv, NEGATIVE, POSITIVE};
use crate::error::{Error, Result};
use crate::game::{expected_utilities, ReceiverPolicy, SignalingScheme};
use crate::history::StageRecord;
use crate::messages::{self, Observation};
use crate::multistage::run_episode;
use crate::oracles::{obedience_term, obfuscation_refine, polarize};
use crate::prompt::{PromptAction, PromptStrategy};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Player {
    Sender,
    Receiver,
}

impl fmt::Display for Player {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Player::Sender => "sender",
            Player::Receiver => "receiver",
        })
    }
}

/// S1: the receiver sees the polarized label. S2: it reads the message itself.
/// S3: repeated stages with visible history.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    #[default]
    S1,
    S2,
    S3,
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s1" => Ok(Setting::S1),
            "s2" => Ok(Setting::S2),
            "s3" => Ok(Setting::S3),
            other => Err(Error::domain(format!("unknown setting {other:?} (expected s1, s2 or s3)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlayOptions {
    pub setting: Setting,
    /// The receiver is told the sender's style.
    pub commitment: bool,
    /// Sender search scores subtract the obedience penalty, and the meta-game keeps the
    /// receiver's deviation constraints.
    pub obedience: bool,
    /// S2 messages go through self-evaluation and rewriting before the receiver reads them.
    pub obfuscation: bool,
    pub obfuscation_rounds: usize,
    pub penalty_coef: f64,
    /// Playouts per cell, or episodes per cell in S3.
    pub samples: usize,
    pub horizon: usize,
    pub seed: u64,
}

impl Default for PlayOptions {
    fn default() -> Self {
        PlayOptions {
            setting: Setting::S1,
            commitment: true,
            obedience: true,
            obfuscation: true,
            obfuscation_rounds: 3,
            penalty_coef: 1.0,
            samples: 100,
            horizon: 5,
            seed: 0,
        }
    }
}

/// A pool entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Strategy {
    Scheme(SignalingScheme),
    Policy(ReceiverPolicy),
    Prompt(PromptStrategy),
}

impl Strategy {
    /// Identity used to detect duplicates in a pool.
    pub fn key(&self) -> String {
        let rounded = |m: &[Vec<f64>]| {
            m.iter()
                .map(|r| r.iter().map(|p| format!("{:.9}", p)).collect::<Vec<_>>().join(","))
                .collect::<Vec<_>>()
                .join(";")
        };
        match self {
            Strategy::Scheme(s) => format!("scheme:{}", rounded(s.matrix())),
            Strategy::Policy(p) => format!("policy:{}", rounded(p.rows())),
            Strategy::Prompt(p) => format!("prompt:{}", p.key()),
        }
    }

    pub fn action(a: PromptAction) -> Self {
        Strategy::Prompt(PromptStrategy::Action(a))
    }

    pub fn as_scheme(&self) -> Option<&SignalingScheme> {
        match self {
            Strategy::Scheme(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_policy(&self) -> Option<&ReceiverPolicy> {
        match self {
            Strategy::Policy(p) => Some(p),
            _ => None,
        }
    }

    pub fn as_prompt(&self) -> Option<&PromptStrategy> {
        match self {
            Strategy::Prompt(p) => Some(p),
            _ => None,
        }
    }
}

/// Outcome statistics of one (sender, receiver) pair, as masses over decision units.
/// Exact cells carry probabilities; sampled cells carry counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub sender: f64,
    pub receiver: f64,
    pub samples: usize,
    pub weight: f64,
    pub state_mass: Vec<f64>,
    /// `[state][signal]`, the signal being the polarized label.
    pub label_mass: Vec<Vec<f64>>,
    /// `[signal][action]`.
    pub decision_mass: Vec<Vec<f64>>,
    /// Per recommended action: accumulated `u_receiver(deviation) - u_receiver(recommended)`.
    pub obedience_terms: Vec<f64>,
}

impl CellStats {
    fn empty(ns: usize, nl: usize, na: usize) -> Self {
        CellStats {
            sender: 0.0,
            receiver: 0.0,
            samples: 0,
            weight: 0.0,
            state_mass: vec![0.0; ns],
            label_mass: vec![vec![0.0; nl]; ns],
            decision_mass: vec![vec![0.0; na]; nl],
            obedience_terms: vec![0.0; na],
        }
    }

    /// Largest clamped average obedience gap over recommended actions.
    pub fn penalty(&self) -> f64 {
        if self.weight <= 0.0 {
            return 0.0;
        }
        self.obedience_terms.iter().map(|t| (t / self.weight).max(0.0)).fold(0.0, f64::max)
    }

    pub fn payoff(&self, player: Player) -> f64 {
        match player {
            Player::Sender => self.sender,
            Player::Receiver => self.receiver,
        }
    }

    fn record(&mut self, state: usize, label: usize, decision: usize, rewards: (f64, f64), term: f64) {
        self.weight += 1.0;
        self.sender += rewards.0;
        self.receiver += rewards.1;
        self.state_mass[state] += 1.0;
        self.label_mass[state][label] += 1.0;
        self.decision_mass[label][decision] += 1.0;
        self.obedience_terms[label] += term;
    }

    fn finish(mut self, samples: usize) -> Self {
        if self.weight > 0.0 {
            self.sender /= self.weight;
            self.receiver /= self.weight;
        }
        self.samples = samples;
        self
    }
}

/// Shared evaluation context: environment, backend, options and a cell cache.
pub struct Arena {
    pub env: VerbalizedEnv,
    pub backend: Arc<dyn Backend>,
    pub options: PlayOptions,
    cache: Mutex<HashMap<(String, String), CellStats>>,
}

pub(crate) struct Step {
    pub label: usize,
    pub message: String,
    pub decision: usize,
    pub sender_prompt: String,
    pub receiver_prompt: String,
}

impl Arena {
    pub fn new(env: VerbalizedEnv, backend: Arc<dyn Backend>, options: PlayOptions) -> Result<Self> {
        if options.samples == 0 {
            return Err(Error::domain("need at least one sample per cell"));
        }
        if !(options.penalty_coef >= 0.0) {
            return Err(Error::domain("penalty coefficient must be non-negative"));
        }
        Ok(Arena { env, backend, options, cache: Mutex::new(HashMap::new()) })
    }

    pub fn backend(&self) -> &dyn Backend {
        self.backend.as_ref()
    }

    /// Cached cell evaluation.
    pub fn cell(&self, sender: &Strategy, receiver: &Strategy) -> Result<CellStats> {
        let key = (sender.key(), receiver.key());
        if let Some(hit) = self.cache.lock().unwrap_or_else(|e| e.into_inner()).get(&key) {
            return Ok(hit.clone());
        }
        let stats = self.evaluate(sender, receiver)?;
        self.cache.lock().unwrap_or_else(|e| e.into_inner()).insert(key, stats.clone());
        Ok(stats)
    }

    fn evaluate(&self, sender: &Strategy, receiver: &Strategy) -> Result<CellStats> {
        match (sender, receiver) {
            (Strategy::Scheme(s), Strategy::Policy(p)) => self.exact_cell(s, p),
            (Strategy::Prompt(PromptStrategy::Action(s)), Strategy::Prompt(PromptStrategy::Action(r)))
                if self.options.setting != Setting::S3 =>
            {
                self.sampled_cell(s, r)
            }
            (Strategy::Prompt(s), Strategy::Prompt(r)) => self.episode_cell(s, r),
            _ => Err(Error::domain("sender and receiver strategies are of incompatible kinds")),
        }
    }

    fn exact_cell(&self, scheme: &SignalingScheme, policy: &ReceiverPolicy) -> Result<CellStats> {
        let inst = &self.env.base;
        let v = expected_utilities(inst, scheme, policy)?;
        let (ns, nl, na) = (inst.n_states(), inst.n_signals(), inst.n_actions());
        let mut c = CellStats::empty(ns, nl, na);
        c.sender = v.sender;
        c.receiver = v.receiver;
        c.weight = 1.0;
        c.samples = 1;
        for w in 0..ns {
            c.state_mass[w] = inst.prior[w];
            for s in 0..nl {
                let m = inst.prior[w] * scheme.prob(w, s);
                c.label_mass[w][s] = m;
                for a in 0..na {
                    c.decision_mass[s][a] += m * policy.prob(s, a);
                }
            }
        }
        if inst.is_direct() {
            for a in 0..na {
                c.obedience_terms[a] = (0..na)
                    .filter(|&b| b != a)
                    .map(|b| {
                        (0..ns)
                            .map(|w| inst.prior[w] * scheme.prob(w, a) * (inst.u_receiver[w][b] - inst.u_receiver[w][a]))
                            .sum::<f64>()
                    })
                    .fold(f64::NEG_INFINITY, f64::max)
                    .max(0.0);
            }
        }
        Ok(c)
    }

    /// One sender message and receiver decision. The seeds depend only on `parts`, so two
    /// cells sharing a sample index see the same random draws.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn step(
        &self,
        state: usize,
        state_text: &str,
        sender_style: &PromptAction,
        receiver_style: &PromptAction,
        sender_history: Option<&[StageRecord]>,
        receiver_history: Option<&[StageRecord]>,
        parts: &[&str],
    ) -> Result<Step> {
        let b = self.backend();
        let env = &self.env;
        let derive = |role: &str| {
            let mut p = vec![role];
            p.extend_from_slice(parts);
            seed::derive(self.options.seed, &p)
        };
        let state_id = &env.base.states[state];
        let sender_prompt = messages::sender_prompt(env, sender_style, state_id, state_text, sender_history);
        let mut message = backend::complete(b, &sender_prompt, derive("sender"))?;
        let label = polarize(&message, env, b, derive("polarize"))?;
        let commitment = [(sender_style.clone(), 1.0)];
        let commitment = self.options.commitment.then_some(&commitment[..]);
        let observation = match self.options.setting {
            Setting::S2 => {
                if self.options.obfuscation {
                    message = obfuscation_refine(
                        &message,
                        state_text,
                        self.options.obfuscation_rounds,
                        env,
                        b,
                        derive("obfuscate"),
                    )?;
                }
                Observation::Message(&message)
            }
            Setting::S1 | Setting::S3 => Observation::Label(&env.signal_labels[label]),
        };
        let receiver_prompt = messages::receiver_prompt(env, receiver_style, commitment, observation, receiver_history);
        let reply = backend::complete(b, &receiver_prompt, derive("receiver"))?;
        let decision = messages::parse_decision(env, &reply)?;
        Ok(Step { label, message, decision, sender_prompt, receiver_prompt })
    }

    fn unit_outcome(&self, state: usize, step: &Step, parts: &[&str]) -> Result<((f64, f64), f64)> {
        let inst = &self.env.base;
        let rewards = (inst.u_sender[state][step.decision], inst.u_receiver[state][step.decision]);
        let term = if self.options.obedience {
            let mut p = vec!["predict"];
            p.extend_from_slice(parts);
            obedience_term(&self.env, state, step.label, self.backend(), seed::derive(self.options.seed, &p))?
        } else {
            0.0
        };
        Ok((rewards, term))
    }

    fn sampled_cell(&self, sender: &PromptAction, receiver: &PromptAction) -> Result<CellStats> {
        let inst = &self.env.base;
        let mut c = CellStats::empty(inst.n_states(), inst.n_signals(), inst.n_actions());
        for k in 0..self.options.samples {
            let ks = k.to_string();
            let mut rng = seed::rng(self.options.seed, &["cell", &ks]);
            let states = self.env.draw_states(&mut rng);
            for (m, &w) in states.iter().enumerate() {
                let ms = m.to_string();
                let state_id = &inst.states[w];
                let template = rng.gen_range(0..self.env.n_templates(state_id));
                let text = self.env.render_state(state_id, template, seed::derive(self.options.seed, &["render", &ks, &ms]))?;
                let parts = [ks.as_str(), ms.as_str()];
                let step = self.step(w, &text, sender, receiver, None, None, &parts)?;
                let (rewards, term) = self.unit_outcome(w, &step, &parts)?;
                c.record(w, step.label, step.decision, rewards, term);
            }
        }
        Ok(c.finish(self.options.samples))
    }

    fn episode_cell(&self, sender: &PromptStrategy, receiver: &PromptStrategy) -> Result<CellStats> {
        let inst = &self.env.base;
        let mut c = CellStats::empty(inst.n_states(), inst.n_signals(), inst.n_actions());
        for k in 0..self.options.samples {
            let episode_seed = seed::derive(self.options.seed, &["episode", &k.to_string()]);
            let traj = run_episode(self, sender, receiver, self.options.horizon, k as u64, episode_seed)?;
            for r in &traj.records {
                let w = inst.state_index(&r.state)?;
                let label = if r.sender_recommendation == 1 { POSITIVE } else { NEGATIVE };
                let decision = if r.receiver_decision == 1 { POSITIVE } else { NEGATIVE };
                let step = Step {
                    label,
                    message: String::new(),
                    decision,
                    sender_prompt: String::new(),
                    receiver_prompt: String::new(),
                };
                let parts = [format!("episode-{k}"), r.stage.to_string()];
                let parts: Vec<&str> = parts.iter().map(String::as_str).collect();
                let (_, term) = self.unit_outcome(w, &step, &parts)?;
                c.record(w, label, decision, (r.sender_reward, r.receiver_reward), term);
            }
        }
        Ok(c.finish(self.options.samples))
    }
}
