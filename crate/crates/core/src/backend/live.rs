//! Chat-completions client over HTTP.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Backend, BackendRequest, BackendResponse, RequestKind, Usage};
use crate::error::{Error, Result};
use crate::messages::find_word;

pub const ENDPOINT_VAR: &str = "VBP_LLM_ENDPOINT";
pub const API_KEY_VAR: &str = "VBP_LLM_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LiveConfig {
    /// Full URL of the chat-completions route; falls back to `VBP_LLM_ENDPOINT`.
    pub endpoint: Option<String>,
    /// Never written to run outputs; falls back to `VBP_LLM_API_KEY`.
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub model: String,
    pub max_attempts: u32,
    pub backoff_ms: u64,
    pub max_concurrency: usize,
    pub timeout_s: u64,
}

impl Default for LiveConfig {
    fn default() -> Self {
        LiveConfig {
            endpoint: None,
            api_key: None,
            model: "gpt-4o-mini".into(),
            max_attempts: 3,
            backoff_ms: 500,
            max_concurrency: 4,
            timeout_s: 60,
        }
    }
}

struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

pub struct LiveBackend {
    config: LiveConfig,
    endpoint: String,
    api_key: Option<String>,
    agent: ureq::Agent,
    slots: Semaphore,
}

impl LiveBackend {
    pub fn new(config: LiveConfig) -> Result<Self> {
        let endpoint = config
            .endpoint
            .clone()
            .or_else(|| std::env::var(ENDPOINT_VAR).ok())
            .filter(|e| !e.trim().is_empty())
            .ok_or_else(|| Error::domain(format!("live backend needs an endpoint (set {ENDPOINT_VAR})")))?;
        if config.max_attempts == 0 || config.max_concurrency == 0 {
            return Err(Error::domain("live backend needs at least one attempt and one connection"));
        }
        let api_key = config.api_key.clone().or_else(|| std::env::var(API_KEY_VAR).ok());
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_s)))
            .http_status_as_error(false)
            .build()
            .into();
        let slots = Semaphore { free: Mutex::new(config.max_concurrency), cv: Condvar::new() };
        Ok(LiveBackend { config, endpoint, api_key, agent, slots })
    }

    fn messages(req: &BackendRequest) -> Value {
        let user = match req.kind {
            RequestKind::Complete => req.prompt.clone(),
            RequestKind::Score => format!(
                "Rate the text below on this criterion: {}.\nReply with a single number between 0 and 1.\n\nText:\n{}",
                req.rubric.as_deref().unwrap_or("overall quality"),
                req.prompt
            ),
            RequestKind::Classify => format!(
                "Assign the text below exactly one of these labels: {}.\nReply with the label only.\n\nText:\n{}",
                req.labels.join(", "),
                req.prompt
            ),
        };
        json!([{ "role": "user", "content": user }])
    }

    fn post_once(&self, body: &Value) -> Result<Value> {
        let _permit = self.slots.acquire();
        let mut request = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = request.send_json(body).map_err(|e| Error::Retryable(e.to_string()))?;
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(Error::Retryable(format!("HTTP {status}")));
        }
        if status >= 400 {
            let text = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(Error::Backend(format!("HTTP {status}: {text}")));
        }
        resp.body_mut()
            .read_json::<Value>()
            .map_err(|e| Error::Backend(format!("unreadable response: {e}")))
    }

    fn post(&self, body: &Value) -> Result<Value> {
        let mut last = None;
        for attempt in 0..self.config.max_attempts {
            if attempt > 0 {
                thread::sleep(Duration::from_millis(self.config.backoff_ms << (attempt - 1)));
            }
            match self.post_once(body) {
                Err(e) if e.is_retryable() => last = Some(e),
                other => return other,
            }
        }
        Err(Error::Backend(format!(
            "gave up after {} attempts: {}",
            self.config.max_attempts,
            last.map_or_else(String::new, |e| e.to_string())
        )))
    }
}

fn parse_score(text: &str) -> Option<f64> {
    text.split(|c: char| !(c.is_ascii_digit() || c == '.' || c == '-'))
        .filter_map(|t| t.parse::<f64>().ok())
        .find(|v| v.is_finite())
        .map(|v| v.clamp(0.0, 1.0))
}

fn parse_label(text: &str, labels: &[String]) -> Option<String> {
    let lower = text.to_lowercase();
    labels
        .iter()
        .filter_map(|l| find_word(&lower, &l.to_lowercase()).map(|pos| (pos, l)))
        .min_by_key(|(pos, _)| *pos)
        .map(|(_, l)| l.clone())
}

impl Backend for LiveBackend {
    fn call(&self, req: &BackendRequest) -> Result<BackendResponse> {
        req.validate()?;
        let body = json!({
            "model": self.config.model,
            "messages": Self::messages(req),
            "temperature": req.effective_temperature(),
            "seed": req.seed,
        });
        let v = self.post(&body)?;
        let text = v
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Backend("response has no message content".into()))?
            .trim()
            .to_owned();
        let tokens = |k: &str| v.pointer(&format!("/usage/{k}")).and_then(Value::as_u64).unwrap_or(0);
        let usage = Usage { prompt_tokens: tokens("prompt_tokens"), completion_tokens: tokens("completion_tokens") };
        let (text, score, label) = match req.kind {
            RequestKind::Complete => (Some(text), None, None),
            RequestKind::Score => (
                None,
                Some(parse_score(&text).ok_or_else(|| Error::Backend(format!("no score in reply {text:?}")))?),
                None,
            ),
            RequestKind::Classify => (
                None,
                None,
                Some(parse_label(&text, &req.labels).ok_or_else(|| Error::Backend(format!("no label in reply {text:?}")))?),
            ),
        };
        Ok(BackendResponse { text, score, label, usage })
    }

    fn identity(&self) -> String {
        format!("live:{}", self.config.model)
    }

    fn is_deterministic(&self) -> bool {
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    /// Serves one canned (status, body) reply per connection and returns the request bodies.
    fn serve(replies: Vec<(u16, String)>) -> (String, thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let handle = thread::spawn(move || {
            let mut bodies = Vec::new();
            for (status, body) in replies {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    let l = line.trim().to_ascii_lowercase();
                    if l.is_empty() {
                        break;
                    }
                    if let Some(v) = l.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                bodies.push(String::from_utf8(buf).unwrap());
                let mut stream = stream;
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
            bodies
        });
        (url, handle)
    }

    fn config(url: &str) -> LiveConfig {
        LiveConfig { endpoint: Some(url.into()), api_key: Some("k".into()), backoff_ms: 1, ..LiveConfig::default() }
    }

    fn ok_body(content: &str) -> String {
        json!({
            "choices": [{"message": {"role": "assistant", "content": content}}],
            "usage": {"prompt_tokens": 7, "completion_tokens": 2}
        })
        .to_string()
    }

    #[test]
    fn retries_after_server_error() {
        let (url, h) = serve(vec![(500, "{}".into()), (200, ok_body("hire"))]);
        let b = LiveBackend::new(config(&url)).unwrap();
        let r = b.call(&BackendRequest::complete("decide", 5)).unwrap();
        assert_eq!(r.text.as_deref(), Some("hire"));
        assert_eq!(r.usage, Usage { prompt_tokens: 7, completion_tokens: 2 });
        let bodies = h.join().unwrap();
        assert_eq!(bodies.len(), 2);
        let sent: Value = serde_json::from_str(&bodies[1]).unwrap();
        assert_eq!(sent["seed"], 5);
        assert_eq!(sent["temperature"], 1.0);
        assert_eq!(sent["messages"][0]["content"], "decide");
    }

    #[test]
    fn gives_up_after_max_attempts() {
        let (url, h) = serve(vec![(503, "{}".into()), (503, "{}".into()), (503, "{}".into())]);
        let b = LiveBackend::new(config(&url)).unwrap();
        let err = b.call(&BackendRequest::complete("x", 1)).unwrap_err();
        assert!(matches!(err, Error::Backend(_)), "{err}");
        assert_eq!(h.join().unwrap().len(), 3);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (url, h) = serve(vec![(400, "{\"error\":\"bad\"}".into())]);
        let b = LiveBackend::new(config(&url)).unwrap();
        assert!(matches!(b.call(&BackendRequest::complete("x", 1)), Err(Error::Backend(_))));
        assert_eq!(h.join().unwrap().len(), 1);
    }

    #[test]
    fn score_and_label_parsing() {
        let (url, h) = serve(vec![(200, ok_body("Score: 0.75")), (200, ok_body("Not_recommend."))]);
        let b = LiveBackend::new(config(&url)).unwrap();
        let s = b.call(&BackendRequest::score("text", "polarity", 1)).unwrap();
        assert_eq!(s.score, Some(0.75));
        let labels = vec!["recommend".to_owned(), "not_recommend".to_owned()];
        let c = b.call(&BackendRequest::classify("text", &labels, 1)).unwrap();
        assert_eq!(c.label.as_deref(), Some("not_recommend"));
        let bodies = h.join().unwrap();
        let sent: Value = serde_json::from_str(&bodies[0]).unwrap();
        assert_eq!(sent["temperature"], 0.0);
    }

    #[test]
    fn missing_endpoint_is_a_domain_error() {
        let cfg = LiveConfig { endpoint: Some(" ".into()), ..LiveConfig::default() };
        assert!(matches!(LiveBackend::new(cfg), Err(Error::Domain(_))));
    }

    #[test]
    fn api_key_is_not_serialized() {
        let cfg = LiveConfig { api_key: Some("secret".into()), ..LiveConfig::default() };
        assert!(!serde_json::to_string(&cfg).unwrap().contains("secret"));
    }
}
