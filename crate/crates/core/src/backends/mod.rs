//! Model backends: chat completion, text embedding and NLI classification.
//!
//! Each capability is a trait with an HTTP implementation speaking the
//! usual open JSON wire formats and a deterministic mock for offline runs.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::client::RequestError;
use crate::transport::TransportError;

pub mod http;
pub mod mock;

pub use http::{HttpChat, HttpEmbedding, HttpNli};
pub use mock::{HashEmbedding, MockChat, MockNli, MockScript, TableEmbedding};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("backend {backend} timed out")]
    Timeout { backend: String },
    #[error("backend {backend} rejected the request with HTTP {status}: {body}")]
    Rejected { backend: String, status: u16, body: String },
    #[error("backend {backend} is unavailable: {message}")]
    Unavailable { backend: String, message: String },
    #[error("backend {backend} returned an empty completion")]
    EmptyCompletion { backend: String },
    #[error("backend {backend} returned a {got}-dimensional vector, expected {expected}")]
    DimensionMismatch {
        backend: String,
        expected: usize,
        got: usize,
    },
    #[error("backend {backend} returned unknown NLI label {label:?}")]
    LabelUnknown { backend: String, label: String },
    #[error("backend {backend} returned a malformed response: {message}")]
    Malformed { backend: String, message: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl BackendError {
    pub(crate) fn from_request(backend: &str, err: RequestError) -> Self {
        let backend = backend.to_owned();
        if err.is_timeout() {
            return BackendError::Timeout { backend };
        }
        match err {
            RequestError::Status { status, body, .. } if (400..500).contains(&status) && status != 429 => {
                BackendError::Rejected { backend, status, body }
            }
            RequestError::Transport {
                source: source @ TransportError::NotRecorded { .. },
                ..
            } => BackendError::Unavailable {
                backend,
                message: source.to_string(),
            },
            other => BackendError::Unavailable {
                backend,
                message: other.to_string(),
            },
        }
    }

    /// Whether the error means the backend could not be reached at all, as
    /// opposed to a bad answer.
    pub fn is_outage(&self) -> bool {
        matches!(self, BackendError::Timeout { .. } | BackendError::Unavailable { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    /// Pipeline role issuing the request; not sent on the wire.
    pub role: String,
    pub model_id: String,
    /// Empty means no system message is sent.
    pub system_prompt: String,
    pub user_prompt: String,
    /// `None` leaves the parameter to the model's default.
    pub temperature: Option<f64>,
    pub top_p: Option<f64>,
    pub max_tokens: Option<u32>,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.user_prompt.trim().is_empty() {
            return Err(BackendError::InvalidRequest("user prompt is empty".into()));
        }
        if let Some(t) = self.temperature {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(BackendError::InvalidRequest(format!("temperature {t} must be >= 0")));
            }
        }
        if let Some(p) = self.top_p {
            if !(p > 0.0 && p <= 1.0) {
                return Err(BackendError::InvalidRequest(format!("top_p {p} must be in (0, 1]")));
            }
        }
        if self.max_tokens == Some(0) {
            return Err(BackendError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    pub text: String,
    pub usage: Option<TokenUsage>,
    /// Content hash of the request as sent, for audit.
    pub request_hash: String,
    pub latency: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub values: Vec<f64>,
    pub request_hash: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NliLabel {
    Entailment,
    Neutral,
    Contradiction,
}

impl NliLabel {
    pub const ALL: [NliLabel; 3] = [NliLabel::Entailment, NliLabel::Neutral, NliLabel::Contradiction];

    pub fn parse(label: &str) -> Option<Self> {
        match label.trim().to_ascii_lowercase().as_str() {
            "entailment" => Some(NliLabel::Entailment),
            "neutral" => Some(NliLabel::Neutral),
            "contradiction" => Some(NliLabel::Contradiction),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NliScores {
    pub entailment: f64,
    pub neutral: f64,
    pub contradiction: f64,
}

impl NliScores {
    pub fn get(&self, label: NliLabel) -> f64 {
        match label {
            NliLabel::Entailment => self.entailment,
            NliLabel::Neutral => self.neutral,
            NliLabel::Contradiction => self.contradiction,
        }
    }

    /// Rescales to sum to one. `None` for negative, non-finite or all-zero
    /// scores.
    pub fn normalized(self) -> Option<Self> {
        let v = [self.entailment, self.neutral, self.contradiction];
        if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return None;
        }
        let sum: f64 = v.iter().sum();
        if sum <= 0.0 {
            return None;
        }
        Some(Self {
            entailment: self.entailment / sum,
            neutral: self.neutral / sum,
            contradiction: self.contradiction / sum,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NliVerdict {
    pub label: NliLabel,
    pub scores: NliScores,
    pub request_hash: String,
}

impl NliVerdict {
    /// Builds a verdict from a wire label and raw scores, renormalising the
    /// scores and checking the label is their argmax.
    pub fn from_wire(
        backend: &str,
        label: &str,
        scores: NliScores,
        request_hash: String,
    ) -> Result<Self, BackendError> {
        let label = NliLabel::parse(label).ok_or_else(|| BackendError::LabelUnknown {
            backend: backend.into(),
            label: label.into(),
        })?;
        let scores = scores.normalized().ok_or_else(|| BackendError::Malformed {
            backend: backend.into(),
            message: "NLI scores must be finite, non-negative and not all zero".into(),
        })?;
        let max = NliLabel::ALL
            .iter()
            .map(|l| scores.get(*l))
            .fold(f64::NEG_INFINITY, f64::max);
        if scores.get(label) < max {
            return Err(BackendError::Malformed {
                backend: backend.into(),
                message: format!("label {label:?} is not the highest-scoring class"),
            });
        }
        Ok(Self {
            label,
            scores,
            request_hash,
        })
    }
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError>;
}

pub trait EmbeddingBackend: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Embedding, BackendError>;
}

pub trait NliBackend: Send + Sync {
    fn classify(&self, premise: &str, hypothesis: &str) -> Result<NliVerdict, BackendError>;
}

pub(crate) fn content_hash(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    hex::encode(h.finalize())
}

/// Caps the number of concurrent requests to one backend.
#[derive(Debug)]
pub struct InFlight {
    limit: Option<usize>,
    active: Mutex<usize>,
    freed: Condvar,
}

pub struct InFlightGuard<'a> {
    gate: &'a InFlight,
}

impl InFlight {
    pub fn new(limit: Option<usize>) -> Self {
        Self {
            limit: limit.filter(|l| *l > 0),
            active: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn enter(&self) -> InFlightGuard<'_> {
        let mut active = self.active.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(limit) = self.limit {
            while *active >= limit {
                active = self.freed.wait(active).unwrap_or_else(|e| e.into_inner());
            }
        }
        *active += 1;
        InFlightGuard { gate: self }
    }

    pub fn active(&self) -> usize {
        *self.active.lock().unwrap_or_else(|e| e.into_inner())
    }
}

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        let mut active = self.gate.active.lock().unwrap_or_else(|e| e.into_inner());
        *active -= 1;
        self.gate.freed.notify_one();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    fn request() -> ChatRequest {
        ChatRequest {
            role: "expert".into(),
            model_id: "m".into(),
            system_prompt: String::new(),
            user_prompt: "hi".into(),
            temperature: Some(0.0),
            top_p: Some(0.6),
            max_tokens: None,
        }
    }

    #[test]
    fn request_validation() {
        assert!(request().validate().is_ok());
        let mut r = request();
        r.user_prompt = "  ".into();
        assert!(r.validate().is_err());
        let mut r = request();
        r.top_p = Some(0.0);
        assert!(r.validate().is_err());
        let mut r = request();
        r.temperature = Some(-0.1);
        assert!(r.validate().is_err());
    }

    #[test]
    fn nli_verdict_renormalises() {
        let raw = NliScores {
            entailment: 2.0,
            neutral: 1.0,
            contradiction: 1.0,
        };
        let v = NliVerdict::from_wire("n", "ENTAILMENT", raw, String::new()).unwrap();
        assert_eq!(v.label, NliLabel::Entailment);
        assert_eq!(v.scores.entailment, 0.5);
        assert!((v.scores.entailment + v.scores.neutral + v.scores.contradiction - 1.0).abs() < 1e-12);
        assert!(matches!(
            NliVerdict::from_wire("n", "maybe", raw, String::new()),
            Err(BackendError::LabelUnknown { .. })
        ));
        assert!(matches!(
            NliVerdict::from_wire("n", "neutral", raw, String::new()),
            Err(BackendError::Malformed { .. })
        ));
    }

    #[test]
    fn in_flight_limit_holds() {
        let gate = Arc::new(InFlight::new(Some(2)));
        let peak = Arc::new(AtomicUsize::new(0));
        std::thread::scope(|s| {
            for _ in 0..8 {
                let gate = gate.clone();
                let peak = peak.clone();
                s.spawn(move || {
                    let _g = gate.enter();
                    peak.fetch_max(gate.active(), Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(5));
                });
            }
        });
        assert!(peak.load(Ordering::SeqCst) <= 2);
        assert_eq!(gate.active(), 0);
    }
}
