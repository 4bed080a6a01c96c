//! Prompt text exchanged with the language model, and parsing of its replies.
//!
//! A prompt is a sequence of sections. Each starts with a `### Name: value` header line;
//! lines up to the next header form the section body.

use crate::env::{VerbalizedEnv, NEGATIVE, POSITIVE};
use crate::error::{Error, Result};
use crate::history::StageRecord;
use crate::prompt::PromptAction;

pub const TASK_WRITE: &str = "write-signal";
pub const TASK_DECIDE: &str = "decide";
pub const TASK_PROPOSE: &str = "propose-prompts";
pub const TASK_PREDICT: &str = "predict-receiver";
pub const TASK_OBFUSCATE: &str = "obfuscate";

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub name: String,
    pub value: String,
    pub body: String,
}

pub fn parse_sections(prompt: &str) -> Vec<Section> {
    let mut out: Vec<Section> = Vec::new();
    for line in prompt.lines() {
        if let Some(rest) = line.strip_prefix("### ") {
            let (name, value) = rest.split_once(':').unwrap_or((rest, ""));
            out.push(Section { name: name.trim().to_owned(), value: value.trim().to_owned(), body: String::new() });
        } else if let Some(last) = out.last_mut() {
            if !last.body.is_empty() {
                last.body.push('\n');
            }
            last.body.push_str(line);
        }
    }
    out
}

pub fn section<'a>(sections: &'a [Section], name: &str) -> Option<&'a Section> {
    sections.iter().find(|s| s.name == name)
}

/// Parses `key=value` pairs separated by whitespace.
pub fn key_values(s: &str) -> Vec<(&str, &str)> {
    s.split_whitespace().filter_map(|kv| kv.split_once('=')).collect()
}

struct Builder(String);

impl Builder {
    fn new(task: &str, env: &VerbalizedEnv) -> Self {
        Builder(format!("### Task: {task}\n### Env: {}\n", env.id))
    }

    fn header(mut self, name: &str, value: impl AsRef<str>) -> Self {
        self.0.push_str(&format!("### {name}: {}\n", value.as_ref()));
        self
    }

    fn block(mut self, name: &str, value: &str, body: &str) -> Self {
        self.0.push_str(&format!("### {name}: {value}\n"));
        if !body.is_empty() {
            self.0.push_str(body.trim_end());
            self.0.push('\n');
        }
        self
    }
}

fn history_block(history: &[StageRecord]) -> String {
    history
        .iter()
        .map(|h| {
            format!(
                "stage={} signal={} recommendation={} decision={} sender_reward={} receiver_reward={}{}",
                h.stage,
                h.signal.replace(char::is_whitespace, "_"),
                h.sender_recommendation,
                h.receiver_decision,
                h.sender_reward,
                h.receiver_reward,
                if h.state.is_empty() { String::new() } else { format!(" state={}", h.state) },
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Prompt asking the sender to write a signal about `state` in the given style.
pub fn sender_prompt(
    env: &VerbalizedEnv,
    style: &PromptAction,
    state: &str,
    state_text: &str,
    history: Option<&[StageRecord]>,
) -> String {
    let mut b = Builder::new(TASK_WRITE, env)
        .block("Role", "", &env.role_prompts.sender)
        .header("Style", style.to_dict())
        .block("State", &format!("STATE:{state}"), state_text);
    if let Some(h) = history {
        b = b.block("History", &h.len().to_string(), &history_block(h));
    }
    b.block("Instruction", "write the message for the receiver", "").0
}

/// What the receiver observes: a polarized label or the full message.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Observation<'a> {
    Label(&'a str),
    Message(&'a str),
}

/// Prompt asking the receiver for an action. `commitment` lists the sender styles the
/// receiver knows with their probabilities.
pub fn receiver_prompt(
    env: &VerbalizedEnv,
    style: &PromptAction,
    commitment: Option<&[(PromptAction, f64)]>,
    observation: Observation<'_>,
    history: Option<&[StageRecord]>,
) -> String {
    let actions = &env.base.actions;
    let mut b = Builder::new(TASK_DECIDE, env)
        .block("Role", "", &env.role_prompts.receiver)
        .header("Style", style.to_dict())
        .header("Actions", format!("positive={} negative={}", actions[POSITIVE], actions[NEGATIVE]))
        .header("Labels", format!("positive={} negative={}", env.signal_labels[POSITIVE], env.signal_labels[NEGATIVE]))
        .header("Belief", format!("prior={} threshold={}", env.base.prior[POSITIVE], env.belief_threshold()));
    if let Some(c) = commitment {
        let body = c.iter().map(|(a, p)| format!("{} with probability {p}", a.to_dict())).collect::<Vec<_>>().join("\n");
        b = b.block("Commitment", &c.len().to_string(), &body);
    }
    if let Some(h) = history {
        b = b.block("History", &h.len().to_string(), &history_block(h));
    }
    b = match observation {
        Observation::Label(l) => b.header("Signal", l),
        Observation::Message(m) => b.block("Message", "", m),
    };
    b.block("Instruction", &format!("answer with one of: {}", actions.join(", ")), "").0
}

/// Prompt asking the sender to predict the receiver's reply to a recommendation.
pub fn predict_prompt(env: &VerbalizedEnv, recommended: &str) -> String {
    let actions = &env.base.actions;
    Builder::new(TASK_PREDICT, env)
        .header("Actions", format!("positive={} negative={}", actions[POSITIVE], actions[NEGATIVE]))
        .header("Recommended", recommended)
        .block("Instruction", "name the action the receiver will take", "")
        .0
}

/// Prompt asking for `count` new strategies, one JSON object per line. `top` carries the
/// best strategies found so far with their scores.
pub fn propose_prompt(env: &VerbalizedEnv, role: &str, count: usize, candidates: &[String], top: &[(String, f64)]) -> String {
    let top_body = top.iter().map(|(c, s)| format!("{c} score={s}")).collect::<Vec<_>>().join("\n");
    Builder::new(TASK_PROPOSE, env)
        .header("Role", role)
        .header("Count", count.to_string())
        .block("Candidates", &candidates.len().to_string(), &candidates.join("\n"))
        .block("Top", &top.len().to_string(), &top_body)
        .block("Instruction", "propose new strategies as JSON objects, one per line", "")
        .0
}

/// Prompt asking for a rewrite of `message` that is harder to read while keeping its meaning.
pub fn obfuscate_prompt(env: &VerbalizedEnv, message: &str, state_text: &str) -> String {
    Builder::new(TASK_OBFUSCATE, env)
        .block("State", "", state_text)
        .block("Message", "", message)
        .block("Instruction", "rewrite the message so its recommendation is harder to read but unchanged", "")
        .0
}

/// Strips the `score=` suffix from a line of the `Top` section.
pub fn strip_score(line: &str) -> &str {
    match line.rfind(" score=") {
        Some(i) => &line[..i],
        None => line,
    }
}

/// Parses a receiver reply into an action index: the action id mentioned first wins.
pub fn parse_decision(env: &VerbalizedEnv, reply: &str) -> Result<usize> {
    let lower = reply.to_lowercase();
    env.base
        .actions
        .iter()
        .enumerate()
        .filter_map(|(i, a)| find_word(&lower, &a.to_lowercase()).map(|pos| (pos, i)))
        .min()
        .map(|(_, i)| i)
        .ok_or_else(|| Error::Backend(format!("reply names no action: {reply:?}")))
}

pub(crate) fn find_word(hay: &str, needle: &str) -> Option<usize> {
    let is_word = |c: char| c.is_alphanumeric() || c == '_' || c == '-';
    let mut start = 0;
    while let Some(off) = hay[start..].find(needle) {
        let i = start + off;
        let before = hay[..i].chars().next_back().map_or(true, |c| !is_word(c));
        let after = hay[i + needle.len()..].chars().next().map_or(true, |c| !is_word(c));
        if before && after {
            return Some(i);
        }
        start = i + needle.len();
    }
    None
}

/// Parses the lines of a proposal reply, keeping those that are JSON objects.
pub fn parse_proposals(reply: &str) -> Vec<serde_json::Value> {
    reply
        .lines()
        .filter_map(|l| serde_json::from_str::<serde_json::Value>(l.trim()).ok())
        .filter(serde_json::Value::is_object)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::make_rel;

    #[test]
    fn sections_round_trip() {
        let env = make_rel().unwrap();
        let style = PromptAction::new("Tone", "neutral").unwrap();
        let p = sender_prompt(&env, &style, "strong", "line one\nline two", None);
        let s = parse_sections(&p);
        assert_eq!(section(&s, "Task").unwrap().value, TASK_WRITE);
        assert_eq!(section(&s, "Env").unwrap().value, "rel");
        assert_eq!(section(&s, "Style").unwrap().value, r#"{"Tone":"neutral"}"#);
        let st = section(&s, "State").unwrap();
        assert_eq!(st.value, "STATE:strong");
        assert_eq!(st.body, "line one\nline two");
    }

    #[test]
    fn receiver_prompt_lists_commitment() {
        let env = make_rel().unwrap();
        let style = PromptAction::new("Interpretation Style", "analytical").unwrap();
        let c = vec![(PromptAction::new("Tone", "positive").unwrap(), 1.0)];
        let p = receiver_prompt(&env, &style, Some(&c), Observation::Label("recommend"), None);
        let s = parse_sections(&p);
        assert_eq!(section(&s, "Commitment").unwrap().body, r#"{"Tone":"positive"} with probability 1"#);
        assert_eq!(section(&s, "Signal").unwrap().value, "recommend");
        assert_eq!(key_values(&section(&s, "Actions").unwrap().value), vec![("positive", "hire"), ("negative", "reject")]);
    }

    #[test]
    fn decisions_parse_by_first_mention() {
        let env = make_rel().unwrap();
        assert_eq!(parse_decision(&env, "Hire.").unwrap(), 0);
        assert_eq!(parse_decision(&env, "I would reject rather than hire").unwrap(), 1);
        assert!(parse_decision(&env, "rehire someone").is_err());
    }

    #[test]
    fn proposals_skip_non_json_lines() {
        let v = parse_proposals("here you go\n{\"Tone\": \"calm\"}\n[1]\n");
        assert_eq!(v.len(), 1);
        assert_eq!(strip_score(r#"{"a":"b"} score=0.5"#), r#"{"a":"b"}"#);
    }
}
