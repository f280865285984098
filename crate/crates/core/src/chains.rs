//! Differentiated chain generation and perplexity-based representative selection.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use log::debug;
use regex::Regex;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::backend::{Backend, CompletionRequest, CompletionResponse, TokenLogProb};
use crate::error::{Error, Result};
use crate::normalize::normalize_answer;
use crate::template::Template;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Reverse,
}

impl Direction {
    fn instruction(self) -> &'static str {
        match self {
            Direction::Forward => "Reason forward: start from the given information and derive new facts until you reach the goal.",
            Direction::Reverse => "Reason backward: start from the goal, work out what would be needed to reach it, and trace those requirements back to the given information.",
        }
    }
}

/// `b{branch}s{sample}`; ordered by (branch, sample).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ChainId {
    pub branch: u32,
    pub sample: u32,
}

impl ChainId {
    pub fn new(branch: u32, sample: u32) -> Self {
        ChainId { branch, sample }
    }
}

impl fmt::Display for ChainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "b{}s{}", self.branch, self.sample)
    }
}

impl FromStr for ChainId {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let bad = || format!("invalid chain id `{s}`");
        let rest = s.strip_prefix('b').ok_or_else(bad)?;
        let (branch, sample) = rest.split_once('s').ok_or_else(bad)?;
        Ok(ChainId {
            branch: branch.parse().map_err(|_| bad())?,
            sample: sample.parse().map_err(|_| bad())?,
        })
    }
}

impl Serialize for ChainId {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ChainId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchSpec {
    pub branch_id: u32,
    pub differentiation: String,
    pub direction: Direction,
    pub samples: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningStep {
    pub index: usize,
    pub text: String,
    pub chain_id: ChainId,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TokenLogProbs {
    pub entries: Vec<TokenLogProb>,
}

impl TokenLogProbs {
    pub fn from_values(values: &[f64]) -> Self {
        TokenLogProbs {
            entries: values
                .iter()
                .map(|&logprob| TokenLogProb {
                    token: String::new(),
                    logprob,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningChain {
    pub chain_id: ChainId,
    pub branch_id: u32,
    pub direction: Direction,
    pub steps: Vec<ReasoningStep>,
    pub answer_text: String,
    /// Perplexity of the answer field; lower is more confident.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_logprobs: Option<TokenLogProbs>,
}

impl ReasoningChain {
    pub fn normalized_answer(&self) -> String {
        normalize_answer(&self.answer_text)
    }

    /// `Step 1: ...` lines followed by `Answer: ...`.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for step in &self.steps {
            out.push_str(&format!("Step {}: {}\n", step.index + 1, step.text));
        }
        out.push_str(&format!("Answer: {}", self.answer_text));
        out
    }

    pub fn render_prefix(&self, upto: usize) -> String {
        self.steps[..upto.min(self.steps.len())]
            .iter()
            .map(|s| format!("Step {}: {}", s.index + 1, s.text))
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Keep steps `[0, from)` and append `tail`'s steps and answer, re-indexed.
    pub fn splice(&self, from: usize, tail: &ReasoningChain) -> ReasoningChain {
        let mut steps: Vec<ReasoningStep> = self.steps[..from.min(self.steps.len())].to_vec();
        for step in &tail.steps {
            steps.push(ReasoningStep {
                index: steps.len(),
                text: step.text.clone(),
                chain_id: self.chain_id,
            });
        }
        ReasoningChain {
            chain_id: self.chain_id,
            branch_id: self.branch_id,
            direction: self.direction,
            steps,
            answer_text: tail.answer_text.clone(),
            confidence: self.confidence,
            answer_logprobs: self.answer_logprobs.clone(),
        }
    }
}

pub fn build_prompt(template: &Template, spec: &BranchSpec, question: &str) -> String {
    template.render(&[
        ("question", question),
        ("differentiation", &spec.differentiation),
        ("direction", spec.direction.instruction()),
    ])
}

fn answer_marker() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(?:final\s+)?answer\s*(?:\*\*)?\s*[:：]").unwrap())
}

fn step_marker() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)(?:^|[\s*#])step\s*\d+\s*(?:\*\*)?\s*[:.)\-]").unwrap())
}

fn list_marker() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?m)^\s*\d+[.)]\s+").unwrap())
}

fn clean_segment(s: &str) -> &str {
    s.trim_matches(|c: char| c.is_whitespace() || c == '*' || c == '#')
}

/// Split a completion into steps and an answer.
///
/// The answer is taken from the last `Answer:` marker. Steps are split on
/// `Step N:` markers, then numbered-list markers, then non-empty lines. A body
/// with no steps at all yields one step holding the full text.
pub fn parse_steps(raw: &str) -> Result<(Vec<String>, String)> {
    let marker = answer_marker()
        .find_iter(raw)
        .last()
        .ok_or_else(|| Error::UnparseableChain("no `Answer:` field".into()))?;
    let after = &raw[marker.end()..];
    let mut answer = after.lines().next().map(clean_segment).unwrap_or("").to_string();
    if answer.is_empty() {
        answer = after
            .lines()
            .map(clean_segment)
            .find(|l| !l.is_empty())
            .unwrap_or("")
            .to_string();
    }
    if answer.is_empty() {
        return Err(Error::UnparseableChain("empty answer field".into()));
    }

    let body = &raw[..marker.start()];
    let split_on = |positions: Vec<(usize, usize)>| -> Vec<String> {
        positions
            .iter()
            .enumerate()
            .map(|(i, &(_, content_start))| {
                let end = positions.get(i + 1).map_or(body.len(), |&(s, _)| s);
                clean_segment(&body[content_start..end]).to_string()
            })
            .filter(|s| !s.is_empty())
            .collect()
    };

    let mut steps: Vec<String> = {
        let markers: Vec<(usize, usize)> = step_marker().find_iter(body).map(|m| (m.start(), m.end())).collect();
        if !markers.is_empty() {
            split_on(markers)
        } else {
            let markers: Vec<(usize, usize)> = list_marker().find_iter(body).map(|m| (m.start(), m.end())).collect();
            if !markers.is_empty() {
                split_on(markers)
            } else {
                body.lines()
                    .map(clean_segment)
                    .filter(|l| !l.is_empty())
                    .map(str::to_string)
                    .collect()
            }
        }
    };
    if steps.is_empty() {
        steps.push(raw.trim().to_string());
    }
    Ok((steps, answer))
}

pub fn parse_chain(raw: &str, spec: &BranchSpec, chain_id: ChainId) -> Result<ReasoningChain> {
    if raw.trim().is_empty() {
        return Err(Error::UnparseableChain("empty completion".into()));
    }
    let (steps, answer_text) = parse_steps(raw)?;
    Ok(ReasoningChain {
        chain_id,
        branch_id: spec.branch_id,
        direction: spec.direction,
        steps: steps
            .into_iter()
            .enumerate()
            .map(|(index, text)| ReasoningStep { index, text, chain_id })
            .collect(),
        answer_text,
        confidence: None,
        answer_logprobs: None,
    })
}

/// Logprobs of the tokens from the last `Answer:` marker to the end of the text.
pub fn answer_field_logprobs(tokens: &[TokenLogProb]) -> Option<TokenLogProbs> {
    let mut text = String::new();
    let mut spans = Vec::with_capacity(tokens.len());
    for t in tokens {
        let start = text.len();
        text.push_str(&t.token);
        spans.push((start, text.len()));
    }
    let marker = answer_marker().find_iter(&text).last()?;
    let entries: Vec<TokenLogProb> = tokens
        .iter()
        .zip(&spans)
        .filter(|(_, &(_, end))| end > marker.start())
        .map(|(t, _)| t.clone())
        .collect();
    (!entries.is_empty()).then_some(TokenLogProbs { entries })
}

/// `exp(-(1/L) Σ logprob)` over the L entries.
pub fn perplexity(logprobs: &TokenLogProbs) -> Result<f64> {
    if logprobs.is_empty() {
        return Err(Error::EmptyLogprobs);
    }
    let sum: f64 = logprobs.entries.iter().map(|e| e.logprob).sum();
    Ok((-sum / logprobs.len() as f64).exp())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingParams {
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: u64,
    pub parallel: bool,
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams {
            temperature: 0.7,
            max_tokens: 1024,
            seed: 0,
            parallel: false,
        }
    }
}

fn chain_from_response(response: &CompletionResponse, spec: &BranchSpec, chain_id: ChainId) -> Option<ReasoningChain> {
    match parse_chain(&response.text, spec, chain_id) {
        Ok(mut chain) => {
            if let Some(lp) = response.token_logprobs.as_deref().and_then(answer_field_logprobs) {
                chain.confidence = perplexity(&lp).ok();
                chain.answer_logprobs = Some(lp);
            }
            Some(chain)
        }
        Err(e) => {
            debug!("discarding sample {chain_id}: {e}");
            None
        }
    }
}

/// Sample `spec.samples` chains under one prompt. Unparseable samples are
/// dropped; backend errors abort.
pub fn generate_branch(
    spec: &BranchSpec,
    question: &str,
    backend: &dyn Backend,
    template: &Template,
    params: &SamplingParams,
) -> Result<Vec<ReasoningChain>> {
    let prompt = build_prompt(template, spec, question);
    let request_for = |sample: u32| {
        CompletionRequest::new(prompt.clone())
            .temperature(params.temperature)
            .max_tokens(params.max_tokens)
            .logprobs(true)
            .seed(Some(params.seed.wrapping_add(sample as u64)))
    };

    let responses: Vec<std::result::Result<CompletionResponse, _>> = if params.parallel && spec.samples > 1 {
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..spec.samples)
                .map(|k| {
                    let req = request_for(k);
                    scope.spawn(move || backend.complete(&req))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("sampling thread panicked"))
                .collect()
        })
    } else {
        (0..spec.samples).map(|k| backend.complete(&request_for(k))).collect()
    };

    let mut chains = Vec::new();
    for (k, response) in responses.into_iter().enumerate() {
        let response = response?;
        let chain_id = ChainId::new(spec.branch_id, k as u32);
        chains.extend(chain_from_response(&response, spec, chain_id));
    }
    Ok(chains)
}

/// The `keep` lowest-perplexity chains (ties by chain id). Unscored chains
/// rank after every scored one, majority answers first.
pub fn select_representatives(chains: &[ReasoningChain], keep: usize) -> Vec<ReasoningChain> {
    let mut votes: BTreeMap<String, usize> = BTreeMap::new();
    for c in chains {
        *votes.entry(c.normalized_answer()).or_default() += 1;
    }
    let mut ranked: Vec<&ReasoningChain> = chains.iter().collect();
    ranked.sort_by(|a, b| match (a.confidence, b.confidence) {
        (Some(pa), Some(pb)) => pa.total_cmp(&pb).then(a.chain_id.cmp(&b.chain_id)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => {
            let va = votes[&a.normalized_answer()];
            let vb = votes[&b.normalized_answer()];
            vb.cmp(&va).then(a.chain_id.cmp(&b.chain_id))
        }
    });
    ranked.into_iter().take(keep).cloned().collect()
}
