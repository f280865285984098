use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    fingerprint, Backend, BackendError, CallLog, CallRecord, CompletionRequest, CompletionResponse, TokenLogProb,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FingerprintInputs {
    pub prompt: String,
    pub temperature: f64,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl FingerprintInputs {
    pub fn fingerprint(&self) -> String {
        fingerprint(&self.prompt, self.temperature, self.seed)
    }
}

/// Response body as stored in a script file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedResponse {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<Vec<TokenLogProb>>,
}

impl ScriptedResponse {
    pub fn text(text: impl Into<String>) -> Self {
        ScriptedResponse {
            text: text.into(),
            token_logprobs: None,
        }
    }

    pub fn with_logprobs(text: impl Into<String>, logprobs: Vec<(String, f64)>) -> Self {
        ScriptedResponse {
            text: text.into(),
            token_logprobs: Some(
                logprobs
                    .into_iter()
                    .map(|(token, logprob)| TokenLogProb { token, logprob })
                    .collect(),
            ),
        }
    }

    pub(crate) fn into_response(self, backend_id: &str) -> CompletionResponse {
        CompletionResponse {
            text: self.text,
            token_logprobs: self.token_logprobs,
            backend_id: backend_id.to_string(),
            latency_ms: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub fingerprint_inputs: FingerprintInputs,
    pub response: ScriptedResponse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ScriptFileObject {
    entries: Vec<ScriptEntry>,
    #[serde(default)]
    default_response: Option<ScriptedResponse>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
enum ScriptFile {
    Entries(Vec<ScriptEntry>),
    Object(ScriptFileObject),
}

/// Fixed fingerprint → response table.
///
/// On disk this is a JSON array of `{fingerprint_inputs, response}` entries.
/// The object form `{entries, default_response}` is also accepted so a table
/// can carry a fallback.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScriptTable {
    pub entries: Vec<ScriptEntry>,
    pub default_response: Option<ScriptedResponse>,
}

impl ScriptTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, inputs: FingerprintInputs, response: ScriptedResponse) {
        self.entries.push(ScriptEntry {
            fingerprint_inputs: inputs,
            response,
        });
    }

    pub fn with_default(mut self, response: ScriptedResponse) -> Self {
        self.default_response = Some(response);
        self
    }

    /// Successful calls from a call log, first occurrence per fingerprint.
    pub fn from_call_log(log: &[CallRecord]) -> Self {
        let mut seen = std::collections::BTreeSet::new();
        let mut table = ScriptTable::new();
        for record in log {
            let Some(response) = &record.response else { continue };
            if !seen.insert(record.request.fingerprint()) {
                continue;
            }
            table.push(
                FingerprintInputs {
                    prompt: record.request.prompt.clone(),
                    temperature: record.request.temperature,
                    seed: record.request.seed,
                },
                ScriptedResponse {
                    text: response.text.clone(),
                    token_logprobs: response.token_logprobs.clone(),
                },
            );
        }
        table
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let file: ScriptFile = serde_json::from_str(json)?;
        Ok(match file {
            ScriptFile::Entries(entries) => ScriptTable {
                entries,
                default_response: None,
            },
            ScriptFile::Object(obj) => ScriptTable {
                entries: obj.entries,
                default_response: obj.default_response,
            },
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let text = match &self.default_response {
            None => serde_json::to_string_pretty(&self.entries)?,
            Some(default) => serde_json::to_string_pretty(&ScriptFileObject {
                entries: self.entries.clone(),
                default_response: Some(default.clone()),
            })?,
        };
        Ok(text)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.to_json()?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Deterministic replay backend.
pub struct ScriptedBackend {
    lookup: BTreeMap<String, ScriptedResponse>,
    default_response: Option<ScriptedResponse>,
    log: CallLog,
}

impl ScriptedBackend {
    pub fn new(table: ScriptTable) -> Self {
        let mut lookup = BTreeMap::new();
        for entry in table.entries {
            // First entry wins on duplicate fingerprints.
            lookup
                .entry(entry.fingerprint_inputs.fingerprint())
                .or_insert(entry.response);
        }
        ScriptedBackend {
            lookup,
            default_response: table.default_response,
            log: CallLog::default(),
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::new(ScriptTable::load(path)?))
    }

    pub fn len(&self) -> usize {
        self.lookup.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lookup.is_empty()
    }

    fn lookup(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        request.validate()?;
        let fp = request.fingerprint();
        self.lookup
            .get(&fp)
            .or(self.default_response.as_ref())
            .cloned()
            .map(|r| r.into_response("scripted"))
            .ok_or(BackendError::ScriptMiss(fp))
    }
}

impl Backend for ScriptedBackend {
    fn id(&self) -> &str {
        "scripted"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        let outcome = self.lookup(request);
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
