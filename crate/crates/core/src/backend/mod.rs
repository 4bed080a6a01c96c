//! Language-model backends: a deterministic mock, an HTTP chat-completions client and a
//! response cache.

mod cache;
mod live;
mod mock;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use cache::CachedBackend;
pub use live::{LiveBackend, LiveConfig};
pub use mock::{keyword_score, obfuscation_score, MockBackend, MockRules, SenderStyle, ReceiverStyle, Posture};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RequestKind {
    Complete,
    Score,
    Classify,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendRequest {
    pub kind: RequestKind,
    /// The prompt for `Complete`, the text to judge otherwise.
    pub prompt: String,
    #[serde(default)]
    pub rubric: Option<String>,
    #[serde(default)]
    pub labels: Vec<String>,
    pub seed: u64,
    /// Sampling temperature; `None` uses the backend default for the request kind.
    #[serde(default)]
    pub temperature: Option<f64>,
}

impl BackendRequest {
    pub fn complete(prompt: impl Into<String>, seed: u64) -> Self {
        BackendRequest {
            kind: RequestKind::Complete,
            prompt: prompt.into(),
            rubric: None,
            labels: Vec::new(),
            seed,
            temperature: None,
        }
    }

    pub fn score(text: impl Into<String>, rubric: impl Into<String>, seed: u64) -> Self {
        BackendRequest { kind: RequestKind::Score, rubric: Some(rubric.into()), ..Self::complete(text, seed) }
    }

    pub fn classify(text: impl Into<String>, labels: &[String], seed: u64) -> Self {
        BackendRequest { kind: RequestKind::Classify, labels: labels.to_vec(), ..Self::complete(text, seed) }
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = Some(t);
        self
    }

    /// Default temperature: deterministic for judging, sampled for generation.
    pub fn effective_temperature(&self) -> f64 {
        self.temperature.unwrap_or(match self.kind {
            RequestKind::Complete => 1.0,
            RequestKind::Score | RequestKind::Classify => 0.0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.prompt.trim().is_empty() {
            return Err(Error::domain("empty prompt"));
        }
        if let Some(t) = self.temperature {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(Error::domain(format!("temperature must be non-negative, got {t}")));
            }
        }
        if self.kind == RequestKind::Score && self.rubric.as_deref().map_or(true, |r| r.trim().is_empty()) {
            return Err(Error::domain("scoring needs a rubric"));
        }
        if self.kind == RequestKind::Classify && self.labels.len() < 2 {
            return Err(Error::domain("classification needs at least two labels"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendResponse {
    pub text: Option<String>,
    pub score: Option<f64>,
    pub label: Option<String>,
    pub usage: Usage,
}

pub trait Backend: Send + Sync {
    fn call(&self, req: &BackendRequest) -> Result<BackendResponse>;

    /// Identifies the model behind the backend; recorded with run outputs.
    fn identity(&self) -> String;

    /// True when equal requests always produce equal responses.
    fn is_deterministic(&self) -> bool;
}

pub fn complete(b: &dyn Backend, prompt: &str, seed: u64) -> Result<String> {
    b.call(&BackendRequest::complete(prompt, seed))?
        .text
        .ok_or_else(|| Error::Backend("completion response without text".into()))
}

pub fn score(b: &dyn Backend, text: &str, rubric: &str, seed: u64) -> Result<f64> {
    b.call(&BackendRequest::score(text, rubric, seed))?
        .score
        .ok_or_else(|| Error::Backend("score response without a score".into()))
}

pub fn classify(b: &dyn Backend, text: &str, labels: &[String], seed: u64) -> Result<String> {
    b.call(&BackendRequest::classify(text, labels, seed))?
        .label
        .ok_or_else(|| Error::Backend("classification response without a label".into()))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Mock,
    Live,
}

impl std::str::FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mock" => Ok(BackendKind::Mock),
            "live" => Ok(BackendKind::Live),
            other => Err(Error::domain(format!("unknown backend {other:?} (expected mock or live)"))),
        }
    }
}

/// Builds the configured backend wrapped in a response cache.
pub fn build_backend(kind: BackendKind, live: &LiveConfig) -> Result<Arc<dyn Backend>> {
    let inner: Arc<dyn Backend> = match kind {
        BackendKind::Mock => Arc::new(MockBackend::new()?),
        BackendKind::Live => Arc::new(LiveBackend::new(live.clone())?),
    };
    Ok(Arc::new(CachedBackend::new(inner)))
}
