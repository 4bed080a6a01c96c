//! Prompt strategies: a categorical (category, content) style and history-conditional rules
//! that pick a style from interaction statistics.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::history::{history_features, HistoryFeatures, StageRecord, FEATURE_NAMES};
use crate::seed;

/// A writing or decision style such as `{"Tone": "positive"}`. Ordered by (category, content).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PromptAction {
    pub category: String,
    pub content: String,
}

impl PromptAction {
    pub fn new(category: impl Into<String>, content: impl Into<String>) -> Result<Self> {
        let (category, content) = (category.into(), content.into());
        if category.trim().is_empty() || content.trim().is_empty() {
            return Err(Error::domain("prompt action needs a category and a content"));
        }
        Ok(PromptAction { category, content })
    }

    /// `{"Category": "content"}`, the form used inside prompts.
    pub fn to_dict(&self) -> String {
        serde_json::json!({ &self.category: &self.content }).to_string()
    }

    pub fn from_dict(s: &str) -> Result<Self> {
        let map: BTreeMap<String, String> = serde_json::from_str(s.trim())
            .map_err(|e| Error::domain(format!("not a prompt dict {s:?}: {e}")))?;
        let mut it = map.into_iter();
        match (it.next(), it.next()) {
            (Some((k, v)), None) => PromptAction::new(k, v),
            _ => Err(Error::domain(format!("prompt dict must have exactly one entry: {s:?}"))),
        }
    }
}

impl fmt::Display for PromptAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.category, self.content)
    }
}

fn pa(category: &str, content: &str) -> PromptAction {
    PromptAction { category: category.into(), content: content.into() }
}

/// A rule from history statistics to a prompt action.
///
/// Template rules (`constant`, `streak_switch`, `average_threshold`, `delta_trend`,
/// `weighted_score`) read only `feature_set[0]` and choose between `actions[0]` (condition
/// holds) and `actions[1]`. The `rel_*` rules are fixed multi-branch programs whose
/// fallback picks among `actions` at random.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptFunction {
    pub rule_id: String,
    pub parameters: BTreeMap<String, f64>,
    pub feature_set: Vec<String>,
    pub actions: Vec<PromptAction>,
}

impl PromptFunction {
    pub fn constant(action: PromptAction) -> Self {
        PromptFunction {
            rule_id: "constant".into(),
            parameters: BTreeMap::new(),
            feature_set: Vec::new(),
            actions: vec![action],
        }
    }

    /// `rule_id` is one of `streak_switch`, `average_threshold`, `delta_trend`, `weighted_score`.
    pub fn template(
        rule_id: &str,
        feature: &str,
        threshold: f64,
        when_true: PromptAction,
        otherwise: PromptAction,
    ) -> Result<Self> {
        let param = match rule_id {
            "streak_switch" => "min_streak",
            "average_threshold" | "delta_trend" | "weighted_score" => "threshold",
            other => return Err(Error::domain(format!("unknown rule template {other:?}"))),
        };
        if !FEATURE_NAMES.contains(&feature) {
            return Err(Error::domain(format!("unknown history feature {feature:?}")));
        }
        Ok(PromptFunction {
            rule_id: rule_id.into(),
            parameters: BTreeMap::from([(param.to_owned(), threshold)]),
            feature_set: vec![feature.to_owned()],
            actions: vec![when_true, otherwise],
        })
    }

    /// Identity used for pool membership.
    pub fn key(&self) -> String {
        serde_json::to_string(self).expect("prompt function serializes")
    }

    pub fn describe(&self) -> String {
        match self.rule_id.as_str() {
            "constant" => format!("always {}", self.actions[0]),
            "streak_switch" => format!(
                "if {} >= {} then {} else {}",
                self.feature_set[0], self.parameters["min_streak"], self.actions[0], self.actions[1]
            ),
            "delta_trend" => format!(
                "if {} < {} then {} else {}",
                self.feature_set[0], self.parameters["threshold"], self.actions[0], self.actions[1]
            ),
            "average_threshold" | "weighted_score" => format!(
                "if {} > {} then {} else {}",
                self.feature_set[0], self.parameters["threshold"], self.actions[0], self.actions[1]
            ),
            other => other.to_owned(),
        }
    }
}

/// The four fixed recommendation-letter rules: sender and receiver variants, each in a
/// plain form and a form that also reads reward deltas and weighted scores.
pub fn rel_listing_rules() -> Vec<PromptFunction> {
    let plain_features = [
        "avg_receiver_accepts",
        "avg_sender_rewards",
        "avg_receiver_rewards",
        "consecutive_sender_rewards",
        "consecutive_sender_penalties",
        "stage",
    ];
    let plain_receiver_features = [
        "avg_sender_recommendations",
        "avg_receiver_accepts",
        "avg_receiver_rewards",
        "consecutive_receiver_rewards",
        "consecutive_receiver_penalties",
    ];
    let delta_features = [
        "weighted_acceptance_score",
        "weighted_sender_score",
        "avg_sender_rewards",
        "avg_receiver_rewards",
        "avg_receiver_accepts",
        "avg_sender_reward_delta",
        "total_sender_reward_delta",
        "consecutive_accepts",
        "consecutive_sender_rewards",
        "consecutive_sender_penalties",
    ];
    let delta_receiver_features = [
        "weighted_recommendation_score",
        "weighted_receiver_score",
        "avg_sender_recommendations",
        "avg_receiver_accepts",
        "avg_receiver_reward_delta",
        "total_receiver_reward_delta",
        "consecutive_receiver_rewards",
        "consecutive_receiver_penalties",
        "consecutive_strong_recommendations",
    ];
    let rule = |id: &str, features: &[&str], fallback: Vec<PromptAction>| PromptFunction {
        rule_id: id.into(),
        parameters: BTreeMap::new(),
        feature_set: features.iter().map(|s| (*s).to_owned()).collect(),
        actions: fallback,
    };
    vec![
        rule(
            "rel_sender_plain",
            &plain_features,
            vec![pa("Focus", "technical"), pa("Emphasis", "character"), pa("Language Complexity", "complex")],
        ),
        rule(
            "rel_receiver_plain",
            &plain_receiver_features,
            vec![
                pa("Emphasis on Specifics", "low"),
                pa("Interpretation Style", "analytical"),
                pa("Focus Area", "skills"),
            ],
        ),
        rule(
            "rel_sender_trend",
            &delta_features,
            vec![pa("Focus", "soft-skills"), pa("Language Complexity", "complex"), pa("Emphasis", "character")],
        ),
        rule(
            "rel_receiver_trend",
            &delta_receiver_features,
            vec![
                pa("Sensitivity to Tone", "neutral"),
                pa("Emphasis on Specifics", "low"),
                pa("Language Analysis", "informal"),
            ],
        ),
    ]
}

fn listing_branch(rule_id: &str, f: &HistoryFeatures) -> Result<Option<PromptAction>> {
    let stage = f.stage as f64;
    Ok(match rule_id {
        "rel_sender_plain" => {
            if f.consecutive_sender_rewards >= 2 && f.avg_sender_rewards > 0.5 {
                Some(pa("Praise Intensity", "high"))
            } else if f.consecutive_sender_penalties >= 2 && f.avg_sender_rewards < 0.0 {
                Some(pa("Tone", "neutral"))
            } else if f.avg_receiver_accepts > 0.6 && f.avg_sender_rewards < 0.4 {
                Some(pa("Recommendation Strength", "strong"))
            } else if f.avg_sender_rewards > f.avg_receiver_rewards {
                Some(pa("Omission", "minor"))
            } else if stage > 2.0 && f.consecutive_sender_rewards == 0 {
                Some(pa("Specificity", "detailed"))
            } else {
                None
            }
        }
        "rel_receiver_plain" => {
            if f.consecutive_receiver_rewards >= 2 && f.avg_receiver_rewards > 0.5 {
                Some(pa("Risk Tolerance", "high"))
            } else if f.consecutive_receiver_penalties >= 2 && f.avg_receiver_rewards < 0.0 {
                Some(pa("Decision Threshold", "strict"))
            } else if f.avg_sender_recommendations > 0.7 && f.avg_receiver_rewards < 0.3 {
                Some(pa("Omission Detection", "high"))
            } else if f.avg_receiver_accepts > 0.6 && f.consecutive_receiver_rewards >= 2 {
                Some(pa("Recommendation Weight", "high"))
            } else if f.avg_sender_recommendations < 0.4 && f.consecutive_receiver_penalties >= 2 {
                Some(pa("Sensitivity to Tone", "neutral"))
            } else {
                None
            }
        }
        "rel_sender_trend" => {
            if f.weighted_acceptance_score > 0.7 && f.consecutive_sender_rewards >= 2 {
                Some(pa("Tone", "positive"))
            } else if f.weighted_sender_score < 0.3 && f.consecutive_sender_penalties >= 2 {
                Some(pa("Tone", "neutral"))
            } else if f.avg_sender_rewards > f.avg_receiver_rewards && f.weighted_sender_score > 0.5 {
                Some(pa("Praise Intensity", "high"))
            } else if f.avg_receiver_accepts < 0.4 && f.avg_sender_reward_delta < -0.2 {
                Some(pa("Recommendation Strength", "weak"))
            } else if f.total_sender_reward_delta > 0.5 && f.consecutive_accepts >= 2 {
                Some(pa("Specificity", "detailed"))
            } else if f.avg_sender_rewards < 0.0 && f.consecutive_sender_penalties >= 2 {
                Some(pa("Omission", "minor"))
            } else {
                None
            }
        }
        "rel_receiver_trend" => {
            if f.weighted_recommendation_score > 0.7 && f.consecutive_receiver_rewards >= 2 {
                Some(pa("Risk Tolerance", "high"))
            } else if f.weighted_receiver_score < 0.3 && f.consecutive_receiver_penalties >= 2 {
                Some(pa("Decision Threshold", "strict"))
            } else if f.avg_sender_recommendations > 0.6 && f.avg_receiver_reward_delta < -0.3 {
                Some(pa("Omission Detection", "high"))
            } else if f.avg_receiver_accepts > 0.6 && f.weighted_receiver_score > 0.5 {
                Some(pa("Recommendation Weight", "high"))
            } else if f.avg_sender_recommendations < 0.4 && f.consecutive_receiver_penalties >= 2 {
                Some(pa("Interpretation Style", "analytical"))
            } else if f.total_receiver_reward_delta > 0.5 && f.consecutive_strong_recommendations >= 2 {
                Some(pa("Focus Area", "skills"))
            } else {
                None
            }
        }
        other => return Err(Error::domain(format!("unknown rule {other:?}"))),
    })
}

/// Evaluates `func` on a history prefix. Random fallbacks use `fallback_seed` when given and
/// otherwise take the first option.
pub fn evaluate_with_seed(
    func: &PromptFunction,
    prefix: &[StageRecord],
    fallback_seed: Option<u64>,
) -> Result<PromptAction> {
    let need = |n: usize| {
        if func.actions.len() < n {
            Err(Error::domain(format!("rule {:?} needs {n} actions", func.rule_id)))
        } else {
            Ok(())
        }
    };
    let features = history_features(prefix);
    let feature = || -> Result<f64> {
        let name = func
            .feature_set
            .first()
            .ok_or_else(|| Error::domain(format!("rule {:?} has no feature", func.rule_id)))?;
        features.get(name).ok_or_else(|| Error::domain(format!("unknown history feature {name:?}")))
    };
    let param = |name: &str| -> Result<f64> {
        func.parameters
            .get(name)
            .copied()
            .ok_or_else(|| Error::domain(format!("rule {:?} is missing parameter {name:?}", func.rule_id)))
    };
    let branch = |cond: bool| if cond { func.actions[0].clone() } else { func.actions[1].clone() };
    match func.rule_id.as_str() {
        "constant" => {
            need(1)?;
            Ok(func.actions[0].clone())
        }
        "streak_switch" => {
            need(2)?;
            Ok(branch(feature()? >= param("min_streak")?))
        }
        "average_threshold" | "weighted_score" => {
            need(2)?;
            Ok(branch(feature()? > param("threshold")?))
        }
        "delta_trend" => {
            need(2)?;
            Ok(branch(feature()? < param("threshold")?))
        }
        id => {
            if let Some(action) = listing_branch(id, &features)? {
                return Ok(action);
            }
            need(1)?;
            let pick = match fallback_seed {
                Some(s) => seed::rng(s, &["fallback", id]).gen_range(0..func.actions.len()),
                None => 0,
            };
            Ok(func.actions[pick].clone())
        }
    }
}

/// Pure evaluation; random fallbacks take their first option.
pub fn evaluate_prompt_function(func: &PromptFunction, prefix: &[StageRecord]) -> Result<PromptAction> {
    evaluate_with_seed(func, prefix, None)
}

/// A strategy in the verbalized game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PromptStrategy {
    Action(PromptAction),
    Function(PromptFunction),
}

impl PromptStrategy {
    pub fn key(&self) -> String {
        match self {
            PromptStrategy::Action(a) => a.to_dict(),
            PromptStrategy::Function(f) => f.key(),
        }
    }
}
