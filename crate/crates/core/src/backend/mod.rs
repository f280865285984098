//! Uniform LLM access.
//!
//! Every model call in the pipeline goes through [`Backend::complete`]. Two
//! implementations ship: [`HttpBackend`] talks to an OpenAI-compatible
//! chat-completions endpoint, and [`ScriptedBackend`] replays a fixed table of
//! responses keyed by a request fingerprint. [`FnBackend`] wraps a closure and
//! is mostly useful for authoring scripts.
//!
//! All backends record every `complete` invocation, in completion order, in a
//! call log.

mod http;
mod scripted;

use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use http::{HttpBackend, HttpConfig};
pub use scripted::{FingerprintInputs, ScriptEntry, ScriptTable, ScriptedBackend, ScriptedResponse};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("no scripted response for fingerprint {0}")]
    ScriptMiss(String),
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),
    #[error("invalid completion request: {0}")]
    InvalidRequest(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub want_logprobs: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        CompletionRequest {
            prompt: prompt.into(),
            temperature: 0.0,
            max_tokens: 1024,
            want_logprobs: false,
            seed: None,
        }
    }

    pub fn temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    pub fn logprobs(mut self, want: bool) -> Self {
        self.want_logprobs = want;
        self
    }

    pub fn seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.prompt.is_empty() {
            return Err(BackendError::InvalidRequest("empty prompt".into()));
        }
        if self.max_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_tokens must be >= 1".into()));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(BackendError::InvalidRequest(format!(
                "temperature must be a finite non-negative number, got {}",
                self.temperature
            )));
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> String {
        fingerprint(&self.prompt, self.temperature, self.seed)
    }
}

/// Stable request fingerprint over (prompt bytes, temperature rounded to 1e-6, seed).
pub fn fingerprint(prompt: &str, temperature: f64, seed: Option<u64>) -> String {
    let mut hasher = Sha256::new();
    hasher.update((prompt.len() as u64).to_le_bytes());
    hasher.update(prompt.as_bytes());
    let micros = (temperature * 1e6).round() as i64;
    hasher.update(micros.to_le_bytes());
    match seed {
        Some(seed) => {
            hasher.update([1u8]);
            hasher.update(seed.to_le_bytes());
        }
        None => hasher.update([0u8]),
    }
    hex::encode(hasher.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogProb {
    pub token: String,
    pub logprob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    /// Absent when the backend does not report logprobs. Never zero-filled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<Vec<TokenLogProb>>,
    pub backend_id: String,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub request: CompletionRequest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<CompletionResponse>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub trait Backend: Send + Sync {
    fn id(&self) -> &str;

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError>;

    /// Every call made through this backend since construction, in completion order.
    fn call_log(&self) -> Vec<CallRecord>;

    fn call_count(&self) -> usize {
        self.call_log().len()
    }

    /// True when responses are a pure function of the request fingerprint.
    fn is_deterministic(&self) -> bool {
        false
    }
}

impl<B: Backend + ?Sized> Backend for &B {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        (**self).complete(request)
    }
    fn call_log(&self) -> Vec<CallRecord> {
        (**self).call_log()
    }
    fn call_count(&self) -> usize {
        (**self).call_count()
    }
    fn is_deterministic(&self) -> bool {
        (**self).is_deterministic()
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        (**self).complete(request)
    }
    fn call_log(&self) -> Vec<CallRecord> {
        (**self).call_log()
    }
    fn call_count(&self) -> usize {
        (**self).call_count()
    }
    fn is_deterministic(&self) -> bool {
        (**self).is_deterministic()
    }
}

/// Append-only call log shared by the backend implementations.
#[derive(Debug, Default)]
pub(crate) struct CallLog {
    records: Mutex<Vec<CallRecord>>,
}

impl CallLog {
    pub(crate) fn record(&self, request: &CompletionRequest, outcome: &Result<CompletionResponse, BackendError>) {
        let record = match outcome {
            Ok(response) => CallRecord {
                request: request.clone(),
                response: Some(response.clone()),
                error: None,
            },
            Err(err) => CallRecord {
                request: request.clone(),
                response: None,
                error: Some(err.to_string()),
            },
        };
        self.records.lock().expect("call log poisoned").push(record);
    }

    pub(crate) fn snapshot(&self) -> Vec<CallRecord> {
        self.records.lock().expect("call log poisoned").clone()
    }

    pub(crate) fn len(&self) -> usize {
        self.records.lock().expect("call log poisoned").len()
    }
}

type Responder = dyn Fn(&CompletionRequest) -> Result<ScriptedResponse, BackendError> + Send + Sync;

/// Backend driven by a closure. Treated as deterministic: the closure should
/// depend only on the request.
pub struct FnBackend {
    id: String,
    responder: Box<Responder>,
    log: CallLog,
}

impl FnBackend {
    pub fn new<F>(responder: F) -> Self
    where
        F: Fn(&CompletionRequest) -> Result<ScriptedResponse, BackendError> + Send + Sync + 'static,
    {
        FnBackend {
            id: "fn".to_string(),
            responder: Box::new(responder),
            log: CallLog::default(),
        }
    }

    /// Snapshot the successful calls so far as a replayable script table.
    pub fn to_script(&self) -> ScriptTable {
        ScriptTable::from_call_log(&self.log.snapshot())
    }
}

impl Backend for FnBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        let outcome = request
            .validate()
            .and_then(|_| (self.responder)(request))
            .map(|r| r.into_response(&self.id));
        self.log.record(request, &outcome);
        outcome
    }

    fn call_log(&self) -> Vec<CallRecord> {
        self.log.snapshot()
    }

    fn call_count(&self) -> usize {
        self.log.len()
    }

    fn is_deterministic(&self) -> bool {
        true
    }
}
