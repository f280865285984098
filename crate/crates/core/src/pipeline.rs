//! End-to-end driver: generation, verification, graph construction and
//! answer selection, recorded into a [`RunTrace`].

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::backend::{Backend, HttpBackend, HttpConfig, ScriptedBackend};
use crate::chains::{
    generate_branch, select_representatives, BranchSpec, ChainId, Direction, ReasoningChain, SamplingParams,
};
use crate::error::{Error, Result};
use crate::graph::{
    add_cross_dependencies, dependency_prompt, estimate_weights, merge_steps, parse_dependency_edges, JudgeParams,
    ReasoningGraph, WeightMode, EDGE_CONVENTION,
};
use crate::select::{select_answer, SelectionResult};
use crate::template::{PromptTemplates, TemplatePaths};
use crate::verify::{cross_verify, self_verify, CrossCheckReport, VerificationReport, VerifyParams};
use crate::CompletionRequest;

pub const SCHEMA_VERSION: u32 = 1;

pub const DEFAULT_DIFFERENTIATIONS: [&str; 8] = [
    "Break the problem into the quantities it mentions and compute each one explicitly.",
    "Set up an equation for the unknown and solve it.",
    "Work through a concrete instance and generalize from it.",
    "Restate the question in your own words, then solve it directly.",
    "List the constraints first and check each intermediate result against them.",
    "Estimate the answer roughly first, then compute it exactly.",
    "Draw on a known formula or rule that applies, then substitute the values.",
    "Eliminate impossible options before committing to an answer.",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Scripted,
    Http,
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "scripted" => Ok(BackendKind::Scripted),
            "http" => Ok(BackendKind::Http),
            other => Err(format!("unknown backend `{other}` (expected scripted or http)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub script: Option<PathBuf>,
    pub http: HttpConfig,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Scripted,
            script: None,
            http: HttpConfig::default(),
        }
    }
}

impl BackendConfig {
    pub fn build(&self) -> Result<Box<dyn Backend>> {
        match self.kind {
            BackendKind::Scripted => {
                let path = self
                    .script
                    .as_ref()
                    .ok_or_else(|| Error::Config("scripted backend needs a script file".into()))?;
                Ok(Box::new(ScriptedBackend::from_file(path)?))
            }
            BackendKind::Http => Ok(Box::new(HttpBackend::new(self.http.clone())?)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Reasoning branches.
    pub n_b: u32,
    /// Samples per multi-sampled branch.
    pub n_s: u32,
    /// Representatives kept per branch.
    pub keep: u32,
    /// Step-merge similarity threshold.
    pub threshold: f64,
    /// Self-verification refinement rounds.
    pub rounds: u32,
    pub weight_mode: WeightMode,
    pub temperature: f64,
    /// Temperature for critique, divergence, dependency and judge calls.
    pub verify_temperature: f64,
    pub max_tokens: u32,
    pub seed: u64,
    /// Only the first `m` branches are sampled `n_s` times; the rest once.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub multi_sampled_branches: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub differentiations: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub directions: Option<Vec<Direction>>,
    pub cross_dependencies: bool,
    pub verify: bool,
    pub parallel: bool,
    pub backend: BackendConfig,
    pub templates: TemplatePaths,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            n_b: 2,
            n_s: 4,
            keep: 1,
            threshold: 0.75,
            rounds: 2,
            weight_mode: WeightMode::Frequency,
            temperature: 0.7,
            verify_temperature: 0.0,
            max_tokens: 1024,
            seed: 0,
            multi_sampled_branches: None,
            differentiations: None,
            directions: None,
            cross_dependencies: true,
            verify: true,
            parallel: false,
            backend: BackendConfig::default(),
            templates: TemplatePaths::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.n_b < 1 {
            return fail("n_b must be at least 1".into());
        }
        if self.n_s < 1 {
            return fail("n_s must be at least 1".into());
        }
        if self.keep < 1 {
            return fail("keep must be at least 1".into());
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return fail(format!("threshold must be in (0, 1], got {}", self.threshold));
        }
        for (name, t) in [
            ("temperature", self.temperature),
            ("verify_temperature", self.verify_temperature),
        ] {
            if !(0.0..=2.0).contains(&t) {
                return fail(format!("{name} must be in [0, 2], got {t}"));
            }
        }
        if self.max_tokens == 0 {
            return fail("max_tokens must be positive".into());
        }
        if let Some(m) = self.multi_sampled_branches {
            if m > self.n_b {
                return fail(format!("multi_sampled_branches ({m}) exceeds n_b ({})", self.n_b));
            }
        }
        if matches!(&self.differentiations, Some(d) if d.is_empty()) {
            return fail("differentiations must not be empty".into());
        }
        if matches!(&self.directions, Some(d) if d.is_empty()) {
            return fail("directions must not be empty".into());
        }
        Ok(())
    }

    /// One spec per branch. Differentiations and directions cycle when fewer
    /// are given than branches; the default direction alternates forward and
    /// reverse.
    pub fn branch_specs(&self) -> Vec<BranchSpec> {
        let diffs: Vec<String> = match &self.differentiations {
            Some(d) => d.clone(),
            None => DEFAULT_DIFFERENTIATIONS.iter().map(|s| s.to_string()).collect(),
        };
        let dirs = self
            .directions
            .clone()
            .unwrap_or_else(|| vec![Direction::Forward, Direction::Reverse]);
        let multi = self.multi_sampled_branches.unwrap_or(self.n_b);
        (0..self.n_b)
            .map(|b| BranchSpec {
                branch_id: b,
                differentiation: diffs[b as usize % diffs.len()].clone(),
                direction: dirs[b as usize % dirs.len()],
                samples: if b < multi { self.n_s } else { 1 },
            })
            .collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

pub const STAGES: [&str; 5] = [
    "generation",
    "self_verification",
    "cross_verification",
    "dependency_analysis",
    "weight_estimation",
];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CallSummary {
    pub total: usize,
    pub per_stage: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub schema_version: u32,
    pub complete: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub config: RunConfig,
    pub question: String,
    pub backend_id: String,
    pub branches: Vec<BranchSpec>,
    /// Stages that finished, in order.
    pub stages_completed: Vec<String>,
    pub raw_chains: Vec<ReasoningChain>,
    pub representatives: Vec<ChainId>,
    pub verification: Vec<VerificationReport>,
    pub self_verified_chains: Vec<ReasoningChain>,
    pub cross_checks: Vec<CrossCheckReport>,
    pub verified_chains: Vec<ReasoningChain>,
    pub edge_convention: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<ReasoningGraph>,
    pub dependency_edges_added: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection: Option<SelectionResult>,
    pub calls: CallSummary,
    /// Wall-clock per stage. Left out for deterministic backends so replays
    /// produce identical traces.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings_ms: Option<BTreeMap<String, u64>>,
}

impl RunTrace {
    fn new(question: &str, config: &RunConfig, backend: &dyn Backend) -> Self {
        RunTrace {
            schema_version: SCHEMA_VERSION,
            complete: false,
            error: None,
            config: config.clone(),
            question: question.to_string(),
            backend_id: backend.id().to_string(),
            branches: Vec::new(),
            stages_completed: Vec::new(),
            raw_chains: Vec::new(),
            representatives: Vec::new(),
            verification: Vec::new(),
            self_verified_chains: Vec::new(),
            cross_checks: Vec::new(),
            verified_chains: Vec::new(),
            edge_convention: EDGE_CONVENTION.to_string(),
            graph: None,
            dependency_edges_added: 0,
            selection: None,
            calls: CallSummary::default(),
            timings_ms: (!backend.is_deterministic()).then(BTreeMap::new),
        }
    }

    /// Trace for a run that could not start, e.g. because the backend could
    /// not be constructed.
    pub fn aborted(question: &str, config: &RunConfig, backend_id: &str, error: &Error) -> Self {
        RunTrace {
            schema_version: SCHEMA_VERSION,
            complete: false,
            error: Some(error.to_string()),
            config: config.clone(),
            question: question.to_string(),
            backend_id: backend_id.to_string(),
            branches: config.branch_specs(),
            stages_completed: Vec::new(),
            raw_chains: Vec::new(),
            representatives: Vec::new(),
            verification: Vec::new(),
            self_verified_chains: Vec::new(),
            cross_checks: Vec::new(),
            verified_chains: Vec::new(),
            edge_convention: EDGE_CONVENTION.to_string(),
            graph: None,
            dependency_edges_added: 0,
            selection: None,
            calls: CallSummary::default(),
            timings_ms: None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<RunTrace> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RunTrace> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn chosen_answer(&self) -> Option<&str> {
        self.selection.as_ref().map(|s| s.chosen.answer_value.as_str())
    }
}

/// A run that aborted; `trace` holds everything produced before the failure.
#[derive(Debug)]
pub struct PipelineFailure {
    pub error: Error,
    pub trace: Box<RunTrace>,
}

impl fmt::Display for PipelineFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "pipeline aborted: {}", self.error)
    }
}

impl std::error::Error for PipelineFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

struct Recorder<'a> {
    trace: RunTrace,
    backend: &'a dyn Backend,
    calls_at_start: usize,
}

impl Recorder<'_> {
    fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut RunTrace) -> Result<T>) -> Result<T> {
        let before = self.backend.call_count();
        let started = Instant::now();
        let out = f(&mut self.trace);
        let used = self.backend.call_count() - before;
        *self.trace.calls.per_stage.entry(name.to_string()).or_default() += used;
        self.trace.calls.total = self.backend.call_count() - self.calls_at_start;
        if let Some(t) = self.trace.timings_ms.as_mut() {
            t.insert(name.to_string(), started.elapsed().as_millis() as u64);
        }
        if out.is_ok() {
            self.trace.stages_completed.push(name.to_string());
        }
        out
    }

    fn fail(mut self, error: Error) -> PipelineFailure {
        warn!("run aborted: {error}");
        self.trace.error = Some(error.to_string());
        PipelineFailure {
            error,
            trace: Box::new(self.trace),
        }
    }
}

/// Run all four stages over `question`.
pub fn run_pipeline(
    question: &str,
    config: &RunConfig,
    backend: &dyn Backend,
) -> std::result::Result<RunTrace, PipelineFailure> {
    let mut rec = Recorder {
        trace: RunTrace::new(question, config, backend),
        backend,
        calls_at_start: backend.call_count(),
    };
    for stage in STAGES {
        rec.trace.calls.per_stage.insert(stage.to_string(), 0);
    }
    if let Err(e) = config.validate() {
        return Err(rec.fail(e));
    }
    let templates = match PromptTemplates::load(&config.templates) {
        Ok(t) => t,
        Err(e) => return Err(rec.fail(e)),
    };
    match run_stages(&mut rec, question, config, &templates) {
        Ok(()) => {
            rec.trace.complete = true;
            Ok(rec.trace)
        }
        Err(e) => Err(rec.fail(e)),
    }
}

fn run_stages(rec: &mut Recorder<'_>, question: &str, config: &RunConfig, templates: &PromptTemplates) -> Result<()> {
    let backend = rec.backend;
    let specs = config.branch_specs();
    rec.trace.branches = specs.clone();

    rec.stage("generation", |trace| {
        let mut seed = config.seed;
        for spec in &specs {
            let params = SamplingParams {
                temperature: config.temperature,
                max_tokens: config.max_tokens,
                seed,
                parallel: config.parallel,
            };
            seed = seed.wrapping_add(spec.samples as u64);
            let chains = generate_branch(spec, question, backend, &templates.generation, &params)?;
            info!(
                "branch {}: {} of {} samples parsed",
                spec.branch_id,
                chains.len(),
                spec.samples
            );
            let reps = select_representatives(&chains, config.keep as usize);
            trace.representatives.extend(reps.iter().map(|c| c.chain_id));
            trace.raw_chains.extend(chains);
        }
        if trace.representatives.is_empty() {
            return Err(Error::UnparseableChain("no branch produced a parseable chain".into()));
        }
        Ok(())
    })?;

    let representatives: Vec<ReasoningChain> = rec
        .trace
        .representatives
        .iter()
        .filter_map(|id| rec.trace.raw_chains.iter().find(|c| c.chain_id == *id).cloned())
        .collect();
    let vparams = VerifyParams {
        rounds: config.rounds as usize,
        temperature: config.verify_temperature,
        max_tokens: config.max_tokens,
        seed: config.seed,
    };

    let self_verified = rec.stage("self_verification", |trace| {
        if !config.verify {
            trace.self_verified_chains = representatives.clone();
            return Ok(representatives.clone());
        }
        let mut out = Vec::new();
        for chain in &representatives {
            let (revised, report) = self_verify(chain, question, backend, templates, &vparams)?;
            trace.verification.push(report);
            out.push(revised);
        }
        trace.self_verified_chains = out.clone();
        Ok(out)
    })?;

    let verified = rec.stage("cross_verification", |trace| {
        let verified = if config.verify {
            let (chains, reports) = cross_verify(&self_verified, question, backend, templates, &vparams)?;
            trace.cross_checks = reports;
            chains
        } else {
            self_verified.clone()
        };
        trace.verified_chains = verified.clone();
        Ok(verified)
    })?;

    let mut graph = merge_steps(&verified, config.threshold);
    rec.stage("dependency_analysis", |trace| {
        if config.cross_dependencies && graph.step_nodes().next().is_some() {
            let prompt = dependency_prompt(&graph, question, &templates.dependencies);
            let request = CompletionRequest::new(prompt)
                .temperature(config.verify_temperature)
                .max_tokens(config.max_tokens)
                .seed(Some(config.seed));
            let reply = backend.complete(&request)?;
            match parse_dependency_edges(&reply.text) {
                Some(edges) => trace.dependency_edges_added = add_cross_dependencies(&mut graph, &edges),
                None => warn!("dependency reply unparseable; keeping adjacency edges only"),
            }
        }
        trace.graph = Some(graph.clone());
        Ok(())
    })?;

    rec.stage("weight_estimation", |trace| {
        let judge_params = JudgeParams {
            temperature: config.verify_temperature,
            seed: config.seed,
            parallel: config.parallel,
            ..JudgeParams::default()
        };
        let judge =
            (config.weight_mode == WeightMode::Judge).then_some((backend, &templates.judge, question, &judge_params));
        let weighted = estimate_weights(&graph, config.weight_mode, judge)?;
        trace.graph = Some(weighted);
        Ok(())
    })?;

    let selection = select_answer(rec.trace.graph.as_ref().expect("graph recorded"))?;
    info!("chosen answer: {}", selection.chosen.answer_value);
    rec.trace.selection = Some(selection);
    rec.trace.stages_completed.push("selection".to_string());
    Ok(())
}
