//! A deterministic stand-in for a language model.
//!
//! Sender styles carry a `spin` (chance of a positive message in the negative state) and a
//! `candor` (chance of a positive message in the positive state). Receiver styles map to a
//! posture. Messages are fixed letters whose polarity a keyword score recovers.

use std::collections::{BTreeMap, HashSet};
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use serde::Deserialize;

use super::{Backend, BackendRequest, BackendResponse, RequestKind, Usage};
use crate::env::EnvId;
use crate::error::{Error, Result};
use crate::messages::{self, key_values, parse_sections, section, Section};
use crate::prompt::PromptAction;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct SenderStyle {
    pub category: String,
    pub content: String,
    pub spin: f64,
    pub candor: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Posture {
    /// Takes the action the signal points to.
    Follow,
    /// Always takes the negative action.
    Skeptic,
    /// Always takes the positive action.
    Credulous,
    Contrarian,
    /// Updates the prior with the committed styles and acts on the posterior.
    Bayesian,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ReceiverStyle {
    pub category: String,
    pub content: String,
    pub posture: Posture,
}

#[derive(Debug, Clone, Deserialize)]
struct Weights {
    positive_strong: f64,
    positive_mild: f64,
    negative_strong: f64,
    negative_mild: f64,
}

#[derive(Debug, Clone, Deserialize)]
struct Keywords {
    positive_strong: Vec<String>,
    positive_mild: Vec<String>,
    negative_strong: Vec<String>,
    negative_mild: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
struct RawRules {
    positive_states: Vec<String>,
    weights: Weights,
    keywords: Keywords,
    sender_styles: BTreeMap<String, Vec<SenderStyle>>,
    receiver_styles: BTreeMap<String, Vec<ReceiverStyle>>,
}

#[derive(Debug, Clone)]
pub struct MockRules {
    raw: RawRules,
    letters: BTreeMap<(String, bool), String>,
}

const RULES: &str = include_str!("../../fixtures/mock/rules.json");

const LETTERS: &[(&str, bool, &str)] = &[
    ("strong", true, include_str!("../../fixtures/mock/letters/strong_positive.txt")),
    ("strong", false, include_str!("../../fixtures/mock/letters/strong_negative.txt")),
    ("weak", true, include_str!("../../fixtures/mock/letters/weak_positive.txt")),
    ("weak", false, include_str!("../../fixtures/mock/letters/weak_negative.txt")),
    ("guilty", true, include_str!("../../fixtures/mock/letters/guilty_positive.txt")),
    ("guilty", false, include_str!("../../fixtures/mock/letters/guilty_negative.txt")),
    ("innocent", true, include_str!("../../fixtures/mock/letters/innocent_positive.txt")),
    ("innocent", false, include_str!("../../fixtures/mock/letters/innocent_negative.txt")),
    ("patrolled", true, include_str!("../../fixtures/mock/letters/patrolled_positive.txt")),
    ("patrolled", false, include_str!("../../fixtures/mock/letters/patrolled_negative.txt")),
    ("unpatrolled", true, include_str!("../../fixtures/mock/letters/unpatrolled_positive.txt")),
    ("unpatrolled", false, include_str!("../../fixtures/mock/letters/unpatrolled_negative.txt")),
];

impl MockRules {
    pub fn load() -> Result<Self> {
        let raw: RawRules = serde_json::from_str(RULES)?;
        let letters = LETTERS
            .iter()
            .map(|(s, pos, text)| (((*s).to_owned(), *pos), text.trim().to_owned()))
            .collect();
        Ok(MockRules { raw, letters })
    }

    /// The rules compiled into the binary.
    pub fn shared() -> &'static MockRules {
        static SHARED: OnceLock<MockRules> = OnceLock::new();
        SHARED.get_or_init(|| MockRules::load().expect("bundled mock rules parse"))
    }

    pub fn sender_styles(&self, env: EnvId) -> &[SenderStyle] {
        self.raw.sender_styles.get(env.as_str()).map_or(&[], Vec::as_slice)
    }

    pub fn receiver_styles(&self, env: EnvId) -> &[ReceiverStyle] {
        self.raw.receiver_styles.get(env.as_str()).map_or(&[], Vec::as_slice)
    }

    /// `(spin, candor)` of a sender style; unknown styles are truthful.
    pub fn spin_candor(&self, env: &str, a: &PromptAction) -> (f64, f64) {
        self.raw
            .sender_styles
            .get(env)
            .and_then(|v| v.iter().find(|s| s.category == a.category && s.content == a.content))
            .map_or((0.0, 1.0), |s| (s.spin, s.candor))
    }

    /// Unknown receiver styles follow the signal.
    pub fn posture(&self, env: &str, a: &PromptAction) -> Posture {
        self.raw
            .receiver_styles
            .get(env)
            .and_then(|v| v.iter().find(|s| s.category == a.category && s.content == a.content))
            .map_or(Posture::Follow, |s| s.posture)
    }

    pub fn is_positive_state(&self, state: &str) -> bool {
        self.raw.positive_states.iter().any(|s| s == state)
    }

    pub fn letter(&self, state: &str, positive: bool) -> Result<&str> {
        self.letters
            .get(&(state.to_owned(), positive))
            .map(String::as_str)
            .ok_or_else(|| Error::domain(format!("mock backend has no letter for state {state:?}")))
    }

    /// Sums keyword weights over whole-word occurrences and clamps to [0, 1].
    pub fn keyword_score(&self, text: &str) -> f64 {
        let (k, w) = (&self.raw.keywords, &self.raw.weights);
        let total: f64 = words(text)
            .map(|t| {
                let hit = |list: &[String]| list.iter().any(|kw| kw == &t);
                if hit(&k.positive_strong) {
                    w.positive_strong
                } else if hit(&k.positive_mild) {
                    w.positive_mild
                } else if hit(&k.negative_strong) {
                    w.negative_strong
                } else if hit(&k.negative_mild) {
                    w.negative_mild
                } else {
                    0.0
                }
            })
            .sum();
        total.clamp(0.0, 1.0)
    }

    /// Softens the first strong keyword whose mild counterpart keeps the text on the same
    /// side of 0.5; returns the text unchanged when no swap qualifies.
    pub fn soften(&self, text: &str) -> String {
        let k = &self.raw.keywords;
        let positive = self.keyword_score(text) >= 0.5;
        let pairs = k
            .positive_strong
            .iter()
            .zip(&k.positive_mild)
            .chain(k.negative_strong.iter().zip(&k.negative_mild));
        for (strong, mild) in pairs {
            if let Some(candidate) = replace_word(text, strong, mild) {
                if (self.keyword_score(&candidate) >= 0.5) == positive {
                    return candidate;
                }
            }
        }
        text.to_owned()
    }
}

fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !(c.is_alphanumeric() || c == '-'))
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

fn replace_word(text: &str, from: &str, to: &str) -> Option<String> {
    let lower = text.to_lowercase();
    let is_word = |c: char| c.is_alphanumeric() || c == '-';
    let mut start = 0;
    while let Some(off) = lower[start..].find(from) {
        let i = start + off;
        let end = i + from.len();
        let before = lower[..i].chars().next_back().map_or(true, |c| !is_word(c));
        let after = lower[end..].chars().next().map_or(true, |c| !is_word(c));
        if before && after {
            return Some(format!("{}{}{}", &text[..i], to, &text[end..]));
        }
        start = end;
    }
    None
}

/// Keyword polarity score in [0, 1] under the bundled rules.
pub fn keyword_score(text: &str) -> f64 {
    MockRules::shared().keyword_score(text)
}

/// Highest for messages whose polarity sits closest to the 0.5 boundary.
pub fn obfuscation_score(text: &str) -> f64 {
    1.0 - 2.0 * (keyword_score(text) - 0.5).abs()
}

#[derive(Debug, Clone)]
pub struct MockBackend {
    rules: MockRules,
}

impl MockBackend {
    pub fn new() -> Result<Self> {
        Ok(MockBackend { rules: MockRules::load()? })
    }

    pub fn rules(&self) -> &MockRules {
        &self.rules
    }

    fn complete(&self, prompt: &str, seed: u64) -> Result<String> {
        let s = parse_sections(prompt);
        let task = section(&s, "Task").map(|t| t.value.as_str()).unwrap_or("");
        let env = section(&s, "Env").map(|t| t.value.as_str()).unwrap_or("");
        match task {
            messages::TASK_WRITE => self.write(&s, env, seed),
            messages::TASK_DECIDE => self.decide(&s, env),
            messages::TASK_PREDICT => {
                let actions = actions_of(&s)?;
                let rec = section(&s, "Recommended").map(|r| r.value.as_str()).unwrap_or("");
                Ok(if rec == actions.0 { actions.1 } else { actions.0 })
            }
            messages::TASK_PROPOSE => Ok(self.propose(&s, prompt, seed)),
            messages::TASK_OBFUSCATE => {
                let msg = section(&s, "Message").map(|m| m.body.as_str()).unwrap_or("");
                Ok(self.rules.soften(msg))
            }
            _ => Ok(format!("mock reply {:016x}", seed::derive(seed, &["reply", prompt]))),
        }
    }

    fn write(&self, s: &[Section], env: &str, seed: u64) -> Result<String> {
        let style = section(s, "Style").and_then(|st| PromptAction::from_dict(&st.value).ok());
        let state_sec = section(s, "State").ok_or_else(|| Error::domain("signal prompt has no state"))?;
        let state = state_sec
            .value
            .strip_prefix("STATE:")
            .ok_or_else(|| Error::domain("state section lacks its STATE: tag"))?;
        let (spin, candor) = style.map_or((0.0, 1.0), |a| self.rules.spin_candor(env, &a));
        let u = seed::unit(seed::derive(seed, &["polarity", &state_sec.value, &state_sec.body]));
        let positive = if self.rules.is_positive_state(state) { u < candor } else { u < spin };
        Ok(self.rules.letter(state, positive)?.to_owned())
    }

    fn decide(&self, s: &[Section], env: &str) -> Result<String> {
        let (pos_action, neg_action) = actions_of(s)?;
        let style = section(s, "Style").and_then(|st| PromptAction::from_dict(&st.value).ok());
        let posture = style.map_or(Posture::Follow, |a| self.rules.posture(env, &a));
        let observed_positive = if let Some(sig) = section(s, "Signal") {
            let labels = section(s, "Labels").ok_or_else(|| Error::domain("decision prompt has no labels"))?;
            key_values(&labels.value).iter().any(|(k, v)| *k == "positive" && *v == sig.value)
        } else {
            let msg = section(s, "Message").ok_or_else(|| Error::domain("decision prompt has no signal"))?;
            self.rules.keyword_score(&msg.body) >= 0.5
        };
        let positive = match posture {
            Posture::Follow => observed_positive,
            Posture::Skeptic => false,
            Posture::Credulous => true,
            Posture::Contrarian => !observed_positive,
            Posture::Bayesian => match section(s, "Commitment") {
                None => observed_positive,
                Some(c) => self.bayes(s, env, &c.body, observed_positive)?,
            },
        };
        Ok(if positive { pos_action } else { neg_action })
    }

    fn bayes(&self, s: &[Section], env: &str, commitment: &str, observed_positive: bool) -> Result<bool> {
        let belief = section(s, "Belief").ok_or_else(|| Error::domain("decision prompt has no belief"))?;
        let kv = key_values(&belief.value);
        let get = |name: &str| -> Result<f64> {
            kv.iter()
                .find(|(k, _)| *k == name)
                .and_then(|(_, v)| v.parse().ok())
                .ok_or_else(|| Error::domain(format!("belief section lacks {name}")))
        };
        let (prior, threshold) = (get("prior")?, get("threshold")?);
        let (mut like_pos, mut like_neg) = (0.0, 0.0);
        for line in commitment.lines().filter(|l| !l.trim().is_empty()) {
            let (dict, p) = line
                .rsplit_once(" with probability ")
                .ok_or_else(|| Error::domain(format!("bad commitment line {line:?}")))?;
            let p: f64 = p.trim().parse().map_err(|_| Error::domain(format!("bad probability in {line:?}")))?;
            let (spin, candor) = self.rules.spin_candor(env, &PromptAction::from_dict(dict)?);
            if observed_positive {
                like_pos += p * candor;
                like_neg += p * spin;
            } else {
                like_pos += p * (1.0 - candor);
                like_neg += p * (1.0 - spin);
            }
        }
        let denom = prior * like_pos + (1.0 - prior) * like_neg;
        let posterior = if denom > 0.0 { prior * like_pos / denom } else { prior };
        Ok(posterior >= threshold - 1e-9)
    }

    fn propose(&self, s: &[Section], prompt: &str, seed: u64) -> String {
        let count = section(s, "Count").and_then(|c| c.value.parse::<usize>().ok()).unwrap_or(1);
        let parse = |l: &str| serde_json::from_str::<serde_json::Value>(l.trim()).ok();
        let seen: HashSet<String> = section(s, "Top")
            .map(|t| t.body.lines().filter_map(|l| parse(messages::strip_score(l))).map(|v| v.to_string()).collect())
            .unwrap_or_default();
        let mut unseen: Vec<String> = section(s, "Candidates")
            .map(|c| {
                c.body
                    .lines()
                    .filter_map(parse)
                    .map(|v| v.to_string())
                    .filter(|v| !seen.contains(v))
                    .collect()
            })
            .unwrap_or_default();
        unseen.shuffle(&mut seed::rng(seed, &["propose", prompt]));
        unseen.truncate(count);
        unseen.join("\n")
    }
}

fn actions_of(s: &[Section]) -> Result<(String, String)> {
    let a = section(s, "Actions").ok_or_else(|| Error::domain("prompt has no actions"))?;
    let kv = key_values(&a.value);
    let find = |name: &str| {
        kv.iter()
            .find(|(k, _)| *k == name)
            .map(|(_, v)| (*v).to_owned())
            .ok_or_else(|| Error::domain(format!("actions section lacks {name}")))
    };
    Ok((find("positive")?, find("negative")?))
}

fn count_words(s: &str) -> u64 {
    s.split_whitespace().count() as u64
}

impl Backend for MockBackend {
    fn call(&self, req: &BackendRequest) -> Result<BackendResponse> {
        req.validate()?;
        let (text, score, label) = match req.kind {
            RequestKind::Complete => (Some(self.complete(&req.prompt, req.seed)?), None, None),
            RequestKind::Score => {
                let s = match req.rubric.as_deref() {
                    Some("obfuscation") => 1.0 - 2.0 * (self.rules.keyword_score(&req.prompt) - 0.5).abs(),
                    _ => self.rules.keyword_score(&req.prompt),
                };
                (None, Some(s), None)
            }
            RequestKind::Classify => {
                let label = if self.rules.keyword_score(&req.prompt) >= 0.5 {
                    req.labels[0].clone()
                } else {
                    req.labels[req.labels.len() - 1].clone()
                };
                (None, None, Some(label))
            }
        };
        let reply_words = text.as_deref().or(label.as_deref()).map_or(1, count_words);
        let usage = Usage { prompt_tokens: count_words(&req.prompt), completion_tokens: reply_words };
        Ok(BackendResponse { text, score, label, usage })
    }

    fn identity(&self) -> String {
        "mock".into()
    }

    fn is_deterministic(&self) -> bool {
        true
    }
}
