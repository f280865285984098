use std::time::{Duration, Instant};

use log::{debug, warn};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Backend, BackendError, CallLog, CallRecord, CompletionRequest, CompletionResponse, TokenLogProb};

pub const ENV_API_BASE: &str = "MGRS_API_BASE";
pub const ENV_API_KEY: &str = "MGRS_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    /// Base URL up to and including the version segment, e.g. `https://api.openai.com/v1`.
    pub base_url: String,
    #[serde(default, skip_serializing)]
    pub api_key: Option<String>,
    pub model: String,
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_base_ms: u64,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: u64,
}

fn default_attempts() -> u32 {
    3
}

fn default_backoff_ms() -> u64 {
    250
}

fn default_timeout_s() -> u64 {
    120
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            base_url: "https://api.openai.com/v1".into(),
            api_key: None,
            model: "gpt-4o-mini".into(),
            max_attempts: default_attempts(),
            backoff_base_ms: default_backoff_ms(),
            timeout_s: default_timeout_s(),
        }
    }
}

impl HttpConfig {
    /// Fill base URL and key from `MGRS_API_BASE` / `MGRS_API_KEY` where unset.
    pub fn with_env(mut self) -> Self {
        if let Ok(base) = std::env::var(ENV_API_BASE) {
            if !base.is_empty() {
                self.base_url = base;
            }
        }
        if self.api_key.is_none() {
            self.api_key = std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty());
        }
        self
    }

    fn endpoint(&self) -> String {
        let base = self.base_url.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }
}

enum Attempt {
    Done(CompletionResponse),
    Transient(String),
    Fatal(BackendError),
}

/// OpenAI-compatible chat-completions client with bounded retries.
pub struct HttpBackend {
    config: HttpConfig,
    client: reqwest::blocking::Client,
    id: String,
    log: CallLog,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, BackendError> {
        if config.api_key.is_none() {
            return Err(BackendError::BackendUnavailable(format!(
                "no API key configured (set {ENV_API_KEY})"
            )));
        }
        if config.max_attempts == 0 {
            return Err(BackendError::InvalidRequest("max_attempts must be >= 1".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_s))
            .build()
            .map_err(|e| BackendError::BackendUnavailable(e.to_string()))?;
        let id = format!("http:{}", config.model);
        Ok(HttpBackend {
            config,
            client,
            id,
            log: CallLog::default(),
        })
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }

    fn body(&self, request: &CompletionRequest) -> Value {
        let mut body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        if request.want_logprobs {
            body["logprobs"] = json!(true);
        }
        if let Some(seed) = request.seed {
            body["seed"] = json!(seed);
        }
        body
    }

    fn attempt(&self, request: &CompletionRequest) -> Attempt {
        let started = Instant::now();
        let mut builder = self.client.post(self.config.endpoint()).json(&self.body(request));
        if let Some(key) = &self.config.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = match builder.send() {
            Ok(r) => r,
            Err(e) => return Attempt::Transient(e.to_string()),
        };
        let status = response.status();
        let payload = match response.text() {
            Ok(t) => t,
            Err(e) => return Attempt::Transient(e.to_string()),
        };
        if status.is_server_error() || status.as_u16() == 408 || status.as_u16() == 429 {
            return Attempt::Transient(format!("HTTP {status}"));
        }
        if !status.is_success() {
            return Attempt::Fatal(BackendError::BackendUnavailable(format!(
                "HTTP {status}: {}",
                truncate(&payload, 200)
            )));
        }
        let latency_ms = started.elapsed().as_millis() as u64;
        match parse_chat_completion(&payload) {
            Ok((text, token_logprobs)) => Attempt::Done(CompletionResponse {
                text,
                token_logprobs,
                backend_id: self.id.clone(),
                latency_ms,
            }),
            Err(e) => Attempt::Fatal(e),
        }
    }

    fn backoff(&self, retry: u32) -> Duration {
        let base = self.config.backoff_base_ms as f64 * 2f64.powi(retry as i32);
        let jitter = rand::thread_rng().gen_range(0.8..=1.2);
        Duration::from_millis((base * jitter).round() as u64)
    }

    fn complete_with_retries(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        request.validate()?;
        let mut last = String::new();
        for attempt in 0..self.config.max_attempts {
            if attempt > 0 {
                let wait = self.backoff(attempt - 1);
                debug!("retrying in {wait:?} after: {last}");
                std::thread::sleep(wait);
            }
            match self.attempt(request) {
                Attempt::Done(r) => return Ok(r),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Transient(msg) => {
                    warn!("transient backend failure (attempt {}): {msg}", attempt + 1);
                    last = msg;
                }
            }
        }
        Err(BackendError::BackendUnavailable(format!(
            "gave up after {} attempts: {last}",
            self.config.max_attempts
        )))
    }
}

impl Backend for HttpBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        let outcome = self.complete_with_retries(request);
        self.log.record(request, &outcome);
        outcome
    }

    fn call_log(&self) -> Vec<CallRecord> {
        self.log.snapshot()
    }

    fn call_count(&self) -> usize {
        self.log.len()
    }
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

/// Extract message text and (optional) token logprobs from a chat-completions payload.
pub(crate) fn parse_chat_completion(payload: &str) -> Result<(String, Option<Vec<TokenLogProb>>), BackendError> {
    let value: Value = serde_json::from_str(payload).map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
    let choice = value
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| BackendError::MalformedResponse("missing choices[0]".into()))?;
    let text = choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .or_else(|| choice.get("text").and_then(Value::as_str))
        .ok_or_else(|| BackendError::MalformedResponse("missing message content".into()))?
        .to_string();

    let logprobs = choice
        .pointer("/logprobs/content")
        .and_then(Value::as_array)
        .and_then(|items| {
            items
                .iter()
                .map(|item| {
                    let token = item.get("token")?.as_str()?.to_string();
                    let logprob = item.get("logprob")?.as_f64()?;
                    // Servers occasionally report +0.0000001 from rounding.
                    logprob.is_finite().then(|| TokenLogProb {
                        token,
                        logprob: logprob.min(0.0),
                    })
                })
                .collect::<Option<Vec<_>>>()
        })
        .filter(|v| !v.is_empty());
    Ok((text, logprobs))
}
