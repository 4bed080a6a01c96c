//! Interaction records and the history statistics read by conditional strategies.

use serde::{Deserialize, Serialize};

/// One stage of a repeated persuasion episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: usize,
    /// Sender-private.
    pub state: String,
    pub signal: String,
    /// 1 when the polarized signal is the positive extreme.
    pub sender_recommendation: u8,
    /// 1 when the receiver took the positive action.
    pub receiver_decision: u8,
    /// Sender-private.
    pub sender_reward: f64,
    pub receiver_reward: f64,
    pub sender_prompt: String,
    pub receiver_prompt: String,
}

impl StageRecord {
    /// The record as the receiver sees it: state and the sender's reward are withheld.
    pub fn receiver_view(&self) -> StageRecord {
        StageRecord { state: String::new(), sender_reward: 0.0, ..self.clone() }
    }
}

/// Running statistics over a history prefix. Averages divide by `stage + 1` and are zero on
/// an empty prefix; reward deltas compare each stage with the one before it.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct HistoryFeatures {
    pub stage: usize,
    pub total_receiver_accepts: f64,
    pub total_sender_recommendations: f64,
    pub total_sender_rewards: f64,
    pub total_receiver_rewards: f64,
    pub avg_receiver_accepts: f64,
    pub avg_sender_recommendations: f64,
    pub avg_sender_rewards: f64,
    pub avg_receiver_rewards: f64,
    pub consecutive_accepts: usize,
    pub consecutive_rejections: usize,
    pub consecutive_sender_rewards: usize,
    pub consecutive_sender_penalties: usize,
    pub consecutive_strong_recommendations: usize,
    pub consecutive_weak_recommendations: usize,
    pub consecutive_receiver_rewards: usize,
    pub consecutive_receiver_penalties: usize,
    pub total_sender_reward_delta: f64,
    pub avg_sender_reward_delta: f64,
    pub total_receiver_reward_delta: f64,
    pub avg_receiver_reward_delta: f64,
    pub weighted_acceptance_score: f64,
    pub weighted_sender_score: f64,
    pub weighted_recommendation_score: f64,
    pub weighted_receiver_score: f64,
}

/// Names accepted by [`HistoryFeatures::get`].
pub const FEATURE_NAMES: &[&str] = &[
    "stage",
    "total_receiver_accepts",
    "total_sender_recommendations",
    "total_sender_rewards",
    "total_receiver_rewards",
    "avg_receiver_accepts",
    "avg_sender_recommendations",
    "avg_sender_rewards",
    "avg_receiver_rewards",
    "consecutive_accepts",
    "consecutive_rejections",
    "consecutive_sender_rewards",
    "consecutive_sender_penalties",
    "consecutive_strong_recommendations",
    "consecutive_weak_recommendations",
    "consecutive_receiver_rewards",
    "consecutive_receiver_penalties",
    "total_sender_reward_delta",
    "avg_sender_reward_delta",
    "total_receiver_reward_delta",
    "avg_receiver_reward_delta",
    "weighted_acceptance_score",
    "weighted_sender_score",
    "weighted_recommendation_score",
    "weighted_receiver_score",
];

fn deltas(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    let d: Vec<f64> = v.windows(2).map(|w| w[1] - w[0]).collect();
    if d.is_empty() {
        (0.0, 0.0)
    } else {
        let total: f64 = d.iter().sum();
        (total, total / d.len() as f64)
    }
}

/// Streak counter: increments on `hit`, otherwise resets and counts the opposite streak.
fn streaks(hits: impl Iterator<Item = bool>) -> (usize, usize) {
    hits.fold((0, 0), |(yes, no), hit| if hit { (yes + 1, 0) } else { (0, no + 1) })
}

pub fn history_features(prefix: &[StageRecord]) -> HistoryFeatures {
    let stage = prefix.len();
    let sum = |f: fn(&StageRecord) -> f64| prefix.iter().map(f).sum::<f64>();
    let avg = |total: f64| if stage > 0 { total / (stage + 1) as f64 } else { 0.0 };

    let total_receiver_accepts = sum(|h| f64::from(h.receiver_decision));
    let total_sender_recommendations = sum(|h| f64::from(h.sender_recommendation));
    let total_sender_rewards = sum(|h| h.sender_reward);
    let total_receiver_rewards = sum(|h| h.receiver_reward);

    let (consecutive_accepts, consecutive_rejections) = streaks(prefix.iter().map(|h| h.receiver_decision == 1));
    let (consecutive_sender_rewards, consecutive_sender_penalties) =
        streaks(prefix.iter().map(|h| h.sender_reward > 0.0));
    let (consecutive_strong_recommendations, consecutive_weak_recommendations) =
        streaks(prefix.iter().map(|h| h.sender_recommendation == 1));
    let (consecutive_receiver_rewards, consecutive_receiver_penalties) =
        streaks(prefix.iter().map(|h| h.receiver_reward > 0.0));

    let (total_sender_reward_delta, avg_sender_reward_delta) = deltas(prefix.iter().map(|h| h.sender_reward));
    let (total_receiver_reward_delta, avg_receiver_reward_delta) = deltas(prefix.iter().map(|h| h.receiver_reward));

    let avg_receiver_accepts = avg(total_receiver_accepts);
    let avg_sender_recommendations = avg(total_sender_recommendations);
    let avg_sender_rewards = avg(total_sender_rewards);
    let avg_receiver_rewards = avg(total_receiver_rewards);

    HistoryFeatures {
        stage,
        total_receiver_accepts,
        total_sender_recommendations,
        total_sender_rewards,
        total_receiver_rewards,
        avg_receiver_accepts,
        avg_sender_recommendations,
        avg_sender_rewards,
        avg_receiver_rewards,
        consecutive_accepts,
        consecutive_rejections,
        consecutive_sender_rewards,
        consecutive_sender_penalties,
        consecutive_strong_recommendations,
        consecutive_weak_recommendations,
        consecutive_receiver_rewards,
        consecutive_receiver_penalties,
        total_sender_reward_delta,
        avg_sender_reward_delta,
        total_receiver_reward_delta,
        avg_receiver_reward_delta,
        weighted_acceptance_score: avg_receiver_accepts * 0.6 + avg_sender_reward_delta * 0.4,
        weighted_sender_score: avg_sender_rewards * 0.7 + avg_sender_recommendations * 0.3,
        weighted_recommendation_score: avg_sender_recommendations * 0.5 + avg_receiver_reward_delta * 0.5,
        weighted_receiver_score: avg_receiver_rewards * 0.6 + total_receiver_reward_delta * 0.4,
    }
}

impl HistoryFeatures {
    pub fn get(&self, name: &str) -> Option<f64> {
        Some(match name {
            "stage" => self.stage as f64,
            "total_receiver_accepts" => self.total_receiver_accepts,
            "total_sender_recommendations" => self.total_sender_recommendations,
            "total_sender_rewards" => self.total_sender_rewards,
            "total_receiver_rewards" => self.total_receiver_rewards,
            "avg_receiver_accepts" => self.avg_receiver_accepts,
            "avg_sender_recommendations" => self.avg_sender_recommendations,
            "avg_sender_rewards" => self.avg_sender_rewards,
            "avg_receiver_rewards" => self.avg_receiver_rewards,
            "consecutive_accepts" => self.consecutive_accepts as f64,
            "consecutive_rejections" => self.consecutive_rejections as f64,
            "consecutive_sender_rewards" => self.consecutive_sender_rewards as f64,
            "consecutive_sender_penalties" => self.consecutive_sender_penalties as f64,
            "consecutive_strong_recommendations" => self.consecutive_strong_recommendations as f64,
            "consecutive_weak_recommendations" => self.consecutive_weak_recommendations as f64,
            "consecutive_receiver_rewards" => self.consecutive_receiver_rewards as f64,
            "consecutive_receiver_penalties" => self.consecutive_receiver_penalties as f64,
            "total_sender_reward_delta" => self.total_sender_reward_delta,
            "avg_sender_reward_delta" => self.avg_sender_reward_delta,
            "total_receiver_reward_delta" => self.total_receiver_reward_delta,
            "avg_receiver_reward_delta" => self.avg_receiver_reward_delta,
            "weighted_acceptance_score" => self.weighted_acceptance_score,
            "weighted_sender_score" => self.weighted_sender_score,
            "weighted_recommendation_score" => self.weighted_recommendation_score,
            "weighted_receiver_score" => self.weighted_receiver_score,
            _ => return None,
        })
    }
}

#[cfg(test)]
pub(crate) fn record(decision: u8, recommendation: u8, sender_reward: f64, receiver_reward: f64) -> StageRecord {
    StageRecord {
        stage: 0,
        state: "strong".into(),
        signal: String::new(),
        sender_recommendation: recommendation,
        receiver_decision: decision,
        sender_reward,
        receiver_reward,
        sender_prompt: String::new(),
        receiver_prompt: String::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_prefix_is_all_zero() {
        let f = history_features(&[]);
        for name in FEATURE_NAMES {
            assert_eq!(f.get(name), Some(0.0), "{name}");
        }
        assert_eq!(f.get("nope"), None);
    }

    #[test]
    fn streaks_reset_on_change() {
        let h: Vec<_> = [1, 1, 0].iter().map(|&d| record(d, 1, 1.0, 1.0)).collect();
        let f = history_features(&h);
        assert_eq!(f.consecutive_accepts, 0);
        assert_eq!(f.consecutive_rejections, 1);
        assert_eq!(f.consecutive_strong_recommendations, 3);
    }

    #[test]
    fn reward_deltas_over_consecutive_pairs() {
        let h = vec![record(1, 1, 1.0, 0.0), record(0, 0, 0.0, 0.0)];
        let f = history_features(&h);
        assert_eq!(f.total_sender_reward_delta, -1.0);
        assert_eq!(f.avg_sender_reward_delta, -1.0);
        assert_eq!(f.consecutive_sender_penalties, 1);
    }

    #[test]
    fn averages_use_stage_plus_one() {
        let h = vec![record(1, 1, 1.0, -1.0), record(1, 0, 1.0, 1.0)];
        let f = history_features(&h);
        assert!((f.avg_receiver_accepts - 2.0 / 3.0).abs() < 1e-15);
        assert!((f.avg_sender_recommendations - 1.0 / 3.0).abs() < 1e-15);
        assert!((f.weighted_sender_score - (0.7 * 2.0 / 3.0 + 0.3 / 3.0)).abs() < 1e-15);
        assert!((f.weighted_receiver_score - (0.0 * 0.6 + 2.0 * 0.4)).abs() < 1e-15);
    }

    #[test]
    fn receiver_view_hides_private_fields() {
        let r = record(1, 1, 1.0, 1.0);
        let v = r.receiver_view();
        assert!(v.state.is_empty());
        assert_eq!(v.sender_reward, 0.0);
        assert_eq!(v.receiver_reward, 1.0);
    }
}
