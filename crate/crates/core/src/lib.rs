//! Multi-chain reasoning orchestration.
//!
//! The crate runs a four-stage test-time reasoning pipeline over a pluggable
//! LLM backend:
//!
//! 1. [`chains`]: sample differentiated reasoning chains per branch and keep
//!    the lowest-perplexity representatives.
//! 2. [`verify`]: self-verify each chain (rule-based arithmetic checks plus a
//!    backend critique) and cross-verify disagreeing chains.
//! 3. [`graph`]: merge similar steps into a dependency DAG with per-node
//!    success-rate weights.
//! 4. [`select`]: propagate cumulative success rates (products along chains,
//!    Noisy-OR across independent parents) and pick the answer.
//!
//! [`game24`] is an offline harness for bidirectional search over Game-of-24
//! states, and [`pipeline`] ties the stages together into a serializable
//! [`pipeline::RunTrace`].

pub mod arith;
pub mod backend;
pub mod chains;
pub mod error;
pub mod game24;
pub mod graph;
pub mod normalize;
pub mod pipeline;
pub mod scenarios;
pub mod select;
pub mod template;
pub mod verify;

pub use graph::{GraphNode, NodeId, ReasoningGraph, WeightMode};
pub use select::{CandidateAnswer, SelectionResult};

pub use backend::{
    Backend, BackendError, CallRecord, CompletionRequest, CompletionResponse, FnBackend, HttpBackend, HttpConfig,
    ScriptEntry, ScriptTable, ScriptedBackend,
};
pub use chains::{BranchSpec, ChainId, Direction, ReasoningChain, ReasoningStep, TokenLogProbs};
pub use error::{Error, Result};
pub use pipeline::{run_pipeline, PipelineFailure, RunConfig, RunTrace};
