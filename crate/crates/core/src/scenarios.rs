//! Scripted end-to-end scenarios.
//!
//! Each scenario is a deterministic responder that plays every role the
//! pipeline asks of a model (sampling, critique, divergence analysis,
//! regeneration, dependency analysis) for one question under the default
//! [`RunConfig`]. Recording a run yields a replayable script table.

use crate::backend::{BackendError, CompletionRequest, FnBackend, ScriptTable, ScriptedResponse};
use crate::pipeline::{run_pipeline, PipelineFailure, RunConfig, RunTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// Both branches reach the same answer.
    Agreement,
    /// The branches disagree; divergence analysis blames the wrong chain,
    /// which is regenerated into agreement.
    DisagreementCorrected,
    /// The branches disagree and the divergence verdict cannot be parsed;
    /// propagation decides.
    Unresolved,
}

pub const AGREEMENT_QUESTION: &str = "There are 4 boxes with 6 apples in each box. How many apples are there in total?";
pub const PENS_QUESTION: &str =
    "Pens cost 13 dollars each. Sam buys 4 pens and pays with a 60 dollar bill. How much change does Sam get?";

impl Scenario {
    pub const ALL: [Scenario; 3] = [
        Scenario::Agreement,
        Scenario::DisagreementCorrected,
        Scenario::Unresolved,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Agreement => "agreement",
            Scenario::DisagreementCorrected => "disagreement_corrected",
            Scenario::Unresolved => "unresolved",
        }
    }

    pub fn from_name(name: &str) -> Option<Scenario> {
        Self::ALL.into_iter().find(|s| s.name() == name)
    }

    pub fn question(self) -> &'static str {
        match self {
            Scenario::Agreement => AGREEMENT_QUESTION,
            _ => PENS_QUESTION,
        }
    }

    pub fn expected_answer(self) -> &'static str {
        match self {
            Scenario::Agreement => "24",
            _ => "8",
        }
    }

    pub fn config(self) -> RunConfig {
        RunConfig::default()
    }

    pub fn backend(self) -> FnBackend {
        FnBackend::new(move |req| respond(self, req))
    }

    pub fn run(self) -> Result<RunTrace, PipelineFailure> {
        run_pipeline(self.question(), &self.config(), &self.backend())
    }

    /// Run once against the responder and return the recorded script.
    pub fn record(self) -> Result<(RunTrace, ScriptTable), PipelineFailure> {
        let backend = self.backend();
        let trace = run_pipeline(self.question(), &self.config(), &backend)?;
        Ok((trace, backend.to_script()))
    }
}

/// Sampled chain with answer-field log-probabilities that grow worse with
/// the sample index.
fn sampled(body: &str, answer: &str, seed: u64) -> ScriptedResponse {
    let rank = (seed % 4) as f64;
    ScriptedResponse::with_logprobs(
        format!("{body}\nAnswer: {answer}"),
        vec![
            (body.to_string(), -0.4),
            ("\nAnswer:".to_string(), -0.02 - 0.01 * rank),
            (format!(" {answer}"), -0.05 - 0.3 * rank),
        ],
    )
}

fn respond(scenario: Scenario, req: &CompletionRequest) -> Result<ScriptedResponse, BackendError> {
    let p = req.prompt.as_str();
    let seed = req.seed.unwrap_or(0);
    if p.contains("Approach for this attempt:") {
        let reverse = p.contains("Reason backward:");
        let alt = seed % 2 == 1;
        return Ok(match (scenario, reverse) {
            (Scenario::Agreement, false) => sampled(
                if alt {
                    "Step 1: Every box holds 6 apples.\nStep 2: With 4 boxes that is 4 × 6 = 24 apples."
                } else {
                    "Step 1: Each box holds 6 apples.\nStep 2: 4 boxes × 6 apples = 24 apples."
                },
                "24",
                seed,
            ),
            (Scenario::Agreement, true) => sampled(
                "Step 1: The total is the number of boxes times the apples per box.\nStep 2: That product is 4 × 6 = 24.",
                "24",
                seed,
            ),
            (_, false) => sampled(
                "Step 1: 4 pens cost 4 × 13 = 52 dollars.\nStep 2: Change is 60 - 52 = 8 dollars.",
                "8",
                seed,
            ),
            (_, true) => sampled(
                "Step 1: Sam buys 4 pens at 13 dollars.\nStep 2: The cost is 13 + 4 = 17 dollars.\nStep 3: Change is 60 - 17 = 43 dollars.",
                "43",
                seed,
            ),
        });
    }
    if p.contains("Review the step-by-step solution") {
        return Ok(ScriptedResponse::text("OK"));
    }
    if p.contains("Two solutions to the same question") {
        return Ok(ScriptedResponse::text(match scenario {
            Scenario::Unresolved => "The solutions read the question differently; I cannot tell which is wrong.",
            _ => "Divergence: chain B, step 2",
        }));
    }
    if p.contains("must be redone") {
        return Ok(ScriptedResponse::with_logprobs(
            "Step 2: The cost is 4 × 13 = 52 dollars.\nStep 3: Change is 60 - 52 = 8 dollars.\nAnswer: 8".to_string(),
            vec![
                (
                    "Step 2: The cost is 4 × 13 = 52 dollars.\nStep 3: Change is 60 - 52 = 8 dollars.".to_string(),
                    -0.3,
                ),
                ("\nAnswer:".to_string(), -0.02),
                (" 8".to_string(), -0.04),
            ],
        ));
    }
    if p.contains("Some steps use information") {
        return Ok(ScriptedResponse::text("NONE"));
    }
    if p.contains("Estimate the probability") {
        return Ok(ScriptedResponse::text("0.9"));
    }
    Err(BackendError::ScriptMiss(req.fingerprint()))
}
