//! Composite verification: rule-based arithmetic checks, backend critique with
//! bounded suffix regeneration, and cross-chain divergence resolution.

use std::sync::OnceLock;

use log::{debug, warn};
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::arith::{format_rational, parse_tokens, tokenize, Rational, Token};
use crate::backend::{Backend, CompletionRequest};
use crate::chains::{answer_field_logprobs, parse_chain, perplexity, BranchSpec, ChainId, ReasoningChain};
use crate::error::Result;
use crate::template::PromptTemplates;

mod rational_str {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::arith::{format_rational, parse_expression, Rational};

    pub fn serialize<S: Serializer>(v: &Rational, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(&format_rational(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Rational, D::Error> {
        let text = String::deserialize(d)?;
        parse_expression(&text)
            .and_then(|e| e.eval().ok())
            .ok_or_else(|| serde::de::Error::custom(format!("invalid rational `{text}`")))
    }

    pub mod opt {
        use super::*;

        pub fn serialize<S: Serializer>(v: &Option<Rational>, s: S) -> Result<S::Ok, S::Error> {
            match v {
                Some(v) => super::serialize(v, s),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Rational>, D::Error> {
            let text: Option<String> = Option::deserialize(d)?;
            text.map(|t| {
                parse_expression(&t)
                    .and_then(|e| e.eval().ok())
                    .ok_or_else(|| serde::de::Error::custom(format!("invalid rational `{t}`")))
            })
            .transpose()
        }
    }
}

/// A claimed `lhs = c` whose left side does not evaluate to `c`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArithmeticFinding {
    pub expression: String,
    #[serde(with = "rational_str")]
    pub claimed: Rational,
    /// `None` when the left side divides by zero.
    #[serde(with = "rational_str::opt")]
    pub actual: Option<Rational>,
}

fn is_math_char(c: char) -> bool {
    c.is_ascii_digit()
        || c.is_whitespace()
        || matches!(
            c,
            '.' | '(' | ')' | '[' | ']' | '+' | '-' | '−' | '–' | '*' | '×' | '·' | '⋅' | '/' | '÷'
        )
}

fn claimed_value() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*([-−]?)\s*(\d+(?:\.\d+)?)(?:/(\d+))?").unwrap())
}

fn parse_claim(rest: &str) -> Option<(Rational, usize)> {
    let caps = claimed_value().captures(rest)?;
    let mut value = crate::arith::parse_decimal(&caps[2])?;
    if let Some(den) = caps.get(3) {
        let den: i128 = den.as_str().parse().ok()?;
        if den == 0 {
            return None;
        }
        value /= Rational::from_integer(den);
    }
    if !caps[1].is_empty() {
        value = -value;
    }
    Some((value, caps.get(0)?.end()))
}

/// Every `expr = c` in `text` (decimal operands, `+ − × ÷` and ASCII
/// equivalents, parentheses) whose exact value differs from `c`.
pub fn check_arithmetic(text: &str) -> Vec<ArithmeticFinding> {
    let mut findings = Vec::new();
    for (eq, _) in text.match_indices('=') {
        let prev = text[..eq].chars().next_back();
        let next = text[eq + 1..].chars().next();
        if matches!(prev, Some('<' | '>' | '!' | '=')) || next == Some('=') {
            continue;
        }
        let Some((claimed, claim_len)) = parse_claim(&text[eq + 1..]) else {
            continue;
        };

        let window_start = text[..eq]
            .char_indices()
            .rev()
            .take_while(|(_, c)| is_math_char(*c))
            .last()
            .map_or(eq, |(i, _)| i);
        let window = &text[window_start..eq];
        let tokens = tokenize(window);
        let kinds: Vec<Token> = tokens.iter().map(|(t, _, _)| t.clone()).collect();
        let parsed = (0..kinds.len()).find_map(|start| {
            if matches!(kinds[start], Token::Junk) {
                return None;
            }
            parse_tokens(&kinds[start..])
                .filter(|e| e.op_count() >= 1)
                .map(|e| (start, e))
        });
        let Some((start, expr)) = parsed else { continue };

        let actual = match expr.eval() {
            Ok(v) => Some(v),
            Err(crate::arith::EvalError::DivisionByZero) => None,
            Err(crate::arith::EvalError::Overflow) => continue,
        };
        if actual == Some(claimed) {
            continue;
        }
        let expr_start = window_start + tokens[start].1;
        let expr_end = eq + 1 + claim_len;
        findings.push(ArithmeticFinding {
            expression: text[expr_start..expr_end].trim().to_string(),
            claimed,
            actual,
        });
    }
    findings
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Ok,
    ArithmeticError,
    LogicFlag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFinding {
    pub step: usize,
    pub verdict: Verdict,
    pub detail: String,
}

/// Findings refer to the chain as it entered verification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub chain_id: ChainId,
    pub step_findings: Vec<StepFinding>,
    pub revised: bool,
    pub rounds: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    None,
    ChainARevised,
    ChainBRevised,
    BothRevised,
    Unresolved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossCheckReport {
    pub compared: (ChainId, ChainId),
    pub answers_agree: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub divergence_step: Option<(ChainId, usize)>,
    pub resolution: Resolution,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyParams {
    /// Maximum critique/regeneration rounds per chain.
    pub rounds: usize,
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: u64,
}

impl Default for VerifyParams {
    fn default() -> Self {
        VerifyParams {
            rounds: 2,
            temperature: 0.0,
            max_tokens: 1024,
            seed: 0,
        }
    }
}

impl VerifyParams {
    fn request(&self, prompt: String, logprobs: bool) -> CompletionRequest {
        CompletionRequest::new(prompt)
            .temperature(self.temperature)
            .max_tokens(self.max_tokens)
            .logprobs(logprobs)
            .seed(Some(self.seed))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Critique {
    Ok,
    Error { step: usize, detail: String },
    Unclear,
}

/// `OK`, or `ERROR at step N: ...` with N counted from 1.
pub(crate) fn parse_critique(text: &str) -> Critique {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"(?im)error\s+(?:at|in)\s+step\s*(\d+)\s*[:\-.]?\s*(.*)$").unwrap());
    if let Some(caps) = re.captures(text) {
        if let Ok(n) = caps[1].parse::<usize>() {
            if n >= 1 {
                return Critique::Error {
                    step: n - 1,
                    detail: caps[2].trim().to_string(),
                };
            }
        }
    }
    let first = text.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("");
    if first.to_ascii_uppercase().starts_with("OK") {
        Critique::Ok
    } else {
        Critique::Unclear
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Blame {
    A,
    B,
    Both,
}

/// `Divergence: chain A|B|both, step N` with N counted from 1.
pub(crate) fn parse_divergence(text: &str) -> Option<(Blame, usize)> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        Regex::new(r"(?i)divergence\s*:\s*(?:chain|solution)?\s*(a|b|both)\b[\s,;]*(?:at\s+)?step\s*(\d+)").unwrap()
    });
    let caps = re.captures(text)?;
    let blame = match caps[1].to_ascii_lowercase().as_str() {
        "a" => Blame::A,
        "b" => Blame::B,
        _ => Blame::Both,
    };
    let step: usize = caps[2].parse().ok()?;
    step.checked_sub(1).map(|s| (blame, s))
}

fn describe(findings: &[(usize, ArithmeticFinding)]) -> String {
    if findings.is_empty() {
        return "no arithmetic errors found".into();
    }
    findings
        .iter()
        .map(|(step, f)| match &f.actual {
            Some(actual) => format!(
                "step {}: `{}` is wrong, the left side equals {}",
                step + 1,
                f.expression,
                format_rational(actual)
            ),
            None => format!("step {}: `{}` divides by zero", step + 1, f.expression),
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn arithmetic_by_step(chain: &ReasoningChain) -> Vec<(usize, ArithmeticFinding)> {
    chain
        .steps
        .iter()
        .flat_map(|s| check_arithmetic(&s.text).into_iter().map(move |f| (s.index, f)))
        .collect()
}

/// Regenerate `chain` from step `from` (0-based). `None` if the reply does not parse.
fn regenerate(
    chain: &ReasoningChain,
    from: usize,
    feedback: &str,
    question: &str,
    backend: &dyn Backend,
    templates: &PromptTemplates,
    params: &VerifyParams,
) -> Result<Option<ReasoningChain>> {
    let from = from.min(chain.steps.len());
    let prefix = if from == 0 {
        "(none)".to_string()
    } else {
        chain.render_prefix(from)
    };
    let from_step = (from + 1).to_string();
    let prompt = templates.regeneration.render(&[
        ("question", question),
        ("prefix", &prefix),
        ("from_step", &from_step),
        ("feedback", feedback),
    ]);
    let response = backend.complete(&params.request(prompt, true))?;
    let spec = BranchSpec {
        branch_id: chain.branch_id,
        differentiation: String::new(),
        direction: chain.direction,
        samples: 1,
    };
    match parse_chain(&response.text, &spec, chain.chain_id) {
        Ok(tail) => {
            let mut spliced = chain.splice(from, &tail);
            let lp = response.token_logprobs.as_deref().and_then(answer_field_logprobs);
            spliced.confidence = lp.as_ref().and_then(|lp| perplexity(lp).ok());
            spliced.answer_logprobs = lp;
            Ok(Some(spliced))
        }
        Err(e) => {
            warn!("revision of {} unparseable: {e}", chain.chain_id);
            Ok(None)
        }
    }
}

/// Intra-chain verification: at most `params.rounds` rounds of one critique
/// call plus, when anything is flagged, one suffix regeneration.
pub fn self_verify(
    chain: &ReasoningChain,
    question: &str,
    backend: &dyn Backend,
    templates: &PromptTemplates,
    params: &VerifyParams,
) -> Result<(ReasoningChain, VerificationReport)> {
    let initial_arith = arithmetic_by_step(chain);
    let mut logic_flags: Vec<(usize, String)> = Vec::new();
    let mut current = chain.clone();
    let mut revised = false;
    let mut rounds = 0;

    for round in 0..params.rounds {
        rounds += 1;
        let arith = if round == 0 {
            initial_arith.clone()
        } else {
            arithmetic_by_step(&current)
        };
        let findings_text = describe(&arith);
        let prompt = templates.critique.render(&[
            ("question", question),
            ("chain", &current.render()),
            ("findings", &findings_text),
        ]);
        let response = backend.complete(&params.request(prompt, false))?;
        let critique = parse_critique(&response.text);

        let mut earliest = arith.iter().map(|(s, _)| *s).min();
        let mut feedback = if arith.is_empty() { String::new() } else { findings_text };
        if let Critique::Error { step, detail } = &critique {
            if *step < current.steps.len() {
                if round == 0 {
                    logic_flags.push((*step, detail.clone()));
                }
                earliest = Some(earliest.map_or(*step, |e| e.min(*step)));
                if !feedback.is_empty() {
                    feedback.push('\n');
                }
                feedback.push_str(&format!("step {}: {}", step + 1, detail));
            }
        }
        let Some(from) = earliest else {
            debug!("{} verified clean in round {}", current.chain_id, round + 1);
            break;
        };
        match regenerate(&current, from, &feedback, question, backend, templates, params)? {
            Some(next) => {
                current = next;
                revised = true;
            }
            None => break,
        }
    }

    let mut step_findings = Vec::new();
    for step in &chain.steps {
        let mut flagged = false;
        for (_, f) in initial_arith.iter().filter(|(s, _)| *s == step.index) {
            flagged = true;
            let detail = match &f.actual {
                Some(a) => format!("{} (actual {})", f.expression, format_rational(a)),
                None => format!("{} (division by zero)", f.expression),
            };
            step_findings.push(StepFinding {
                step: step.index,
                verdict: Verdict::ArithmeticError,
                detail,
            });
        }
        for (_, detail) in logic_flags.iter().filter(|(s, _)| *s == step.index) {
            flagged = true;
            step_findings.push(StepFinding {
                step: step.index,
                verdict: Verdict::LogicFlag,
                detail: detail.clone(),
            });
        }
        if !flagged {
            step_findings.push(StepFinding {
                step: step.index,
                verdict: Verdict::Ok,
                detail: String::new(),
            });
        }
    }

    let report = VerificationReport {
        chain_id: chain.chain_id,
        step_findings,
        revised,
        rounds,
    };
    Ok((current, report))
}

/// Inter-chain verification over every unordered pair of chains from distinct
/// branches. Only chains named by a divergence verdict are ever changed.
pub fn cross_verify(
    chains: &[ReasoningChain],
    question: &str,
    backend: &dyn Backend,
    templates: &PromptTemplates,
    params: &VerifyParams,
) -> Result<(Vec<ReasoningChain>, Vec<CrossCheckReport>)> {
    let mut current = chains.to_vec();
    let mut reports = Vec::new();
    for i in 0..current.len() {
        for j in (i + 1)..current.len() {
            if current[i].branch_id == current[j].branch_id {
                continue;
            }
            let compared = (current[i].chain_id, current[j].chain_id);
            if current[i].normalized_answer() == current[j].normalized_answer() {
                reports.push(CrossCheckReport {
                    compared,
                    answers_agree: true,
                    divergence_step: None,
                    resolution: Resolution::None,
                });
                continue;
            }

            let prompt = templates.divergence.render(&[
                ("question", question),
                ("chain_a", &current[i].render()),
                ("answer_a", &current[i].answer_text),
                ("chain_b", &current[j].render()),
                ("answer_b", &current[j].answer_text),
            ]);
            let response = backend.complete(&params.request(prompt, false))?;
            let Some((blame, step)) = parse_divergence(&response.text) else {
                reports.push(CrossCheckReport {
                    compared,
                    answers_agree: false,
                    divergence_step: None,
                    resolution: Resolution::Unresolved,
                });
                continue;
            };

            let targets: &[(usize, usize)] = match blame {
                Blame::A => &[(i, j)],
                Blame::B => &[(j, i)],
                Blame::Both => &[(i, j), (j, i)],
            };
            let blamed = targets[0].0;
            let divergence_step = Some((current[blamed].chain_id, step.min(current[blamed].steps.len())));
            let mut fixed = [false, false];
            for &(target, other) in targets {
                let feedback = format!(
                    "this solution diverges from another solution (which concludes {}) at step {}",
                    current[other].answer_text,
                    step + 1
                );
                if let Some(next) = regenerate(&current[target], step, &feedback, question, backend, templates, params)?
                {
                    current[target] = next;
                    fixed[usize::from(target == j)] = true;
                }
            }
            let resolution = match fixed {
                [true, true] => Resolution::BothRevised,
                [true, false] => Resolution::ChainARevised,
                [false, true] => Resolution::ChainBRevised,
                [false, false] => Resolution::Unresolved,
            };
            reports.push(CrossCheckReport {
                compared,
                answers_agree: false,
                divergence_step,
                resolution,
            });
        }
    }
    Ok((current, reports))
}
