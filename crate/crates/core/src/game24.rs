//! Game of 24: bidirectional search over exact-rational states.
//!
//! The forward tree combines two remaining numbers per level (depth 3 reaches a
//! single number). The backward tree has depth one: every pair `{x, y}` with
//! `x op y = 24`. Whenever a forward state is down to two numbers it is checked
//! arithmetically against the backward targets, so a meeting costs no extra
//! expansions or backend calls.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use log::debug;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::arith::{format_rational, parse_expression, Expr, Op, Rational};
use crate::backend::{Backend, CompletionRequest};
use crate::error::{Error, Result};
use crate::template::Template;

pub const TARGET: i128 = 24;
pub const FORWARD_DEPTH: usize = 3;

fn target() -> Rational {
    Rational::from_integer(TARGET)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Operation {
    pub a: String,
    pub op: char,
    pub b: String,
    pub result: String,
}

/// Remaining numbers (each with the expression that produced it) plus the
/// operations applied so far.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Game24State {
    items: Vec<(Rational, Expr)>,
    history: Vec<(Rational, Op, Rational, Rational)>,
}

impl Game24State {
    pub fn new(numbers: &[i64]) -> Self {
        Game24State {
            items: numbers
                .iter()
                .map(|&n| {
                    let v = Rational::from_integer(n as i128);
                    (v, Expr::Num(v))
                })
                .collect(),
            history: Vec::new(),
        }
    }

    /// Remaining values, sorted.
    pub fn remaining(&self) -> Vec<Rational> {
        let mut v: Vec<Rational> = self.items.iter().map(|(v, _)| *v).collect();
        v.sort();
        v
    }

    pub fn history(&self) -> Vec<Operation> {
        self.history
            .iter()
            .map(|(a, op, b, r)| Operation {
                a: format_rational(a),
                op: op.symbol(),
                b: format_rational(b),
                result: format_rational(r),
            })
            .collect()
    }

    pub fn depth(&self) -> usize {
        self.history.len()
    }

    pub fn exprs(&self) -> impl Iterator<Item = &Expr> {
        self.items.iter().map(|(_, e)| e)
    }

    /// Combine items `i` and `j` as `items[i] op items[j]`. `None` on division by zero.
    pub fn combine(&self, i: usize, j: usize, op: Op) -> Option<Game24State> {
        debug_assert!(i != j);
        let (a, ea) = &self.items[i];
        let (b, eb) = &self.items[j];
        let result = op.apply(*a, *b)?;
        let mut items: Vec<(Rational, Expr)> = self
            .items
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != i && *k != j)
            .map(|(_, it)| it.clone())
            .collect();
        items.push((result, Expr::bin(op, ea.clone(), eb.clone())));
        let mut history = self.history.clone();
        history.push((*a, op, *b, result));
        Some(Game24State { items, history })
    }

    /// Every child: each unordered pair with `+`, `*`, and both orders of `-`, `/`.
    pub fn children(&self) -> Vec<Game24State> {
        let n = self.items.len();
        let mut out = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                for (x, y, op) in [
                    (i, j, Op::Add),
                    (i, j, Op::Sub),
                    (j, i, Op::Sub),
                    (i, j, Op::Mul),
                    (i, j, Op::Div),
                    (j, i, Op::Div),
                ] {
                    // Division by zero prunes the branch.
                    out.extend(self.combine(x, y, op));
                }
            }
        }
        out
    }

    /// For a single remaining number equal to 24, its expression.
    pub fn solution(&self) -> Option<String> {
        match self.items.as_slice() {
            [(v, e)] if *v == target() => Some(e.to_string()),
            _ => None,
        }
    }
}

impl fmt::Display for Game24State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let nums: Vec<String> = self.remaining().iter().map(format_rational).collect();
        write!(f, "{}", nums.join(" "))
    }
}

/// One backward-tree node: `x op y = 24`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BackwardTarget {
    pub x: Rational,
    pub y: Rational,
    pub op: Op,
}

/// Bound on integer operands in the eager backward set (13 × 13).
pub const EAGER_BOUND: i128 = 169;

/// Eager backward tree: integer pairs with `|x|, |y| <= 169` and `x op y = 24`.
pub fn backward_targets() -> BTreeSet<BackwardTarget> {
    let mut out = BTreeSet::new();
    for x in -EAGER_BOUND..=EAGER_BOUND {
        for y in -EAGER_BOUND..=EAGER_BOUND {
            let (rx, ry) = (Rational::from_integer(x), Rational::from_integer(y));
            for op in Op::ALL {
                if op.apply(rx, ry) == Some(target()) {
                    out.insert(BackwardTarget { x: rx, y: ry, op });
                }
            }
        }
    }
    out
}

/// Lazy backward check for an arbitrary rational pair: the ordered target the
/// pair completes, if any.
pub fn backward_match(a: Rational, b: Rational) -> Option<BackwardTarget> {
    for (x, y, op) in [
        (a, b, Op::Add),
        (a, b, Op::Mul),
        (a, b, Op::Sub),
        (b, a, Op::Sub),
        (a, b, Op::Div),
        (b, a, Op::Div),
    ] {
        if op.apply(x, y) == Some(target()) {
            return Some(BackwardTarget { x, y, op });
        }
    }
    None
}

/// Depth-first exhaustive search in a fixed order; first expression found.
pub fn oracle_solve(numbers: &[i64]) -> Option<String> {
    fn search(state: &Game24State) -> Option<String> {
        if state.items.len() == 1 {
            return state.solution();
        }
        state.children().iter().find_map(search)
    }
    search(&Game24State::new(numbers))
}

/// Checks that `expr` uses exactly `numbers` (as a multiset) and equals 24.
pub fn validate_expression(numbers: &[i64], expr: &str) -> bool {
    let Some(parsed) = parse_expression(expr) else {
        return false;
    };
    if parsed.eval() != Ok(target()) {
        return false;
    }
    let mut used = parsed.literals();
    let mut given: Vec<Rational> = numbers.iter().map(|&n| Rational::from_integer(n as i128)).collect();
    used.sort();
    given.sort();
    used == given
}

pub trait Expander {
    fn expand(&mut self, state: &Game24State) -> Result<Vec<Game24State>>;

    fn backend_calls(&self) -> usize {
        0
    }

    fn malformed(&self) -> usize {
        0
    }
}

/// Every legal child state.
#[derive(Debug, Default, Clone, Copy)]
pub struct ExhaustiveExpander;

impl Expander for ExhaustiveExpander {
    fn expand(&mut self, state: &Game24State) -> Result<Vec<Game24State>> {
        Ok(state.children())
    }
}

/// Child states proposed by a backend as `a op b = c` lines. Proposals that
/// use numbers not on the board or get the arithmetic wrong are skipped and
/// counted.
pub struct LlmExpander<'a> {
    backend: &'a dyn Backend,
    template: &'a Template,
    temperature: f64,
    seed: u64,
    calls: usize,
    malformed: usize,
}

impl<'a> LlmExpander<'a> {
    pub fn new(backend: &'a dyn Backend, template: &'a Template, temperature: f64, seed: u64) -> Self {
        LlmExpander {
            backend,
            template,
            temperature,
            seed,
            calls: 0,
            malformed: 0,
        }
    }
}

fn proposal_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^\s*(?:[-*•]|\d+[.)])?\s*([^=]+?)\s*=\s*([-−]?[\d./ ]+?)\s*(?:\(.*\))?\s*$").unwrap()
    })
}

/// Apply one proposal line to `state`.
pub(crate) fn apply_proposal(state: &Game24State, line: &str) -> Option<Game24State> {
    let caps = proposal_line().captures(line)?;
    let lhs = parse_expression(&caps[1])?;
    let claimed = parse_expression(&caps[2].replace('−', "-"))?.eval().ok()?;
    let Expr::Bin(op, a, b) = lhs else { return None };
    let (va, vb) = (a.eval().ok()?, b.eval().ok()?);
    if op.apply(va, vb)? != claimed {
        return None;
    }
    let i = state.items.iter().position(|(v, _)| *v == va)?;
    let j = state
        .items
        .iter()
        .enumerate()
        .position(|(k, (v, _))| k != i && *v == vb)?;
    state.combine(i, j, op)
}

impl Expander for LlmExpander<'_> {
    fn expand(&mut self, state: &Game24State) -> Result<Vec<Game24State>> {
        let numbers = state.to_string();
        let prompt = self.template.render(&[("numbers", &numbers)]);
        let request = CompletionRequest::new(prompt)
            .temperature(self.temperature)
            .max_tokens(512)
            .seed(Some(self.seed));
        self.calls += 1;
        let response = self.backend.complete(&request)?;
        let mut out = Vec::new();
        for line in response.text.lines().filter(|l| !l.trim().is_empty()) {
            match apply_proposal(state, line) {
                Some(child) => out.push(child),
                None => {
                    debug!("malformed proposal for [{numbers}]: {line}");
                    self.malformed += 1;
                }
            }
        }
        Ok(out)
    }

    fn backend_calls(&self) -> usize {
        self.calls
    }

    fn malformed(&self) -> usize {
        self.malformed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    Bidirectional,
    ForwardOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intersection {
    pub depth: usize,
    /// The two remaining numbers at the meeting point.
    pub remaining: Vec<String>,
    pub target: String,
    pub history: Vec<Operation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BidirectionalRun {
    pub numbers: Vec<i64>,
    pub mode: SearchMode,
    /// Number of states generated at each forward depth (index 0 is the root).
    pub frontier_sizes: Vec<usize>,
    #[serde(skip)]
    pub forward_frontier: Vec<Vec<Game24State>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intersection: Option<Intersection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expression: Option<String>,
    /// Child states generated.
    pub expansions: usize,
    pub backend_calls: usize,
    pub malformed_proposals: usize,
}

impl BidirectionalRun {
    pub fn solved(&self) -> bool {
        self.expression.is_some()
    }
}

/// Breadth-first forward search to depth 3. In bidirectional mode every
/// two-number state is matched against the backward tree as it is generated
/// and the search stops at the first meeting; otherwise (and as fallback) the
/// search stops at the first depth-3 state equal to 24.
pub fn run_bidirectional(numbers: &[i64], expander: &mut dyn Expander, mode: SearchMode) -> Result<BidirectionalRun> {
    if numbers.len() != 4 {
        return Err(Error::Config(format!("expected 4 numbers, got {}", numbers.len())));
    }
    let root = Game24State::new(numbers);
    let mut run = BidirectionalRun {
        numbers: numbers.to_vec(),
        mode,
        frontier_sizes: vec![1],
        forward_frontier: vec![vec![root]],
        intersection: None,
        expression: None,
        expansions: 0,
        backend_calls: 0,
        malformed_proposals: 0,
    };

    'search: for depth in 1..=FORWARD_DEPTH {
        let mut next = Vec::new();
        let parents = std::mem::take(run.forward_frontier.last_mut().expect("root frontier"));
        for state in &parents {
            let children = expander.expand(state)?;
            run.expansions += children.len();
            for child in children {
                if mode == SearchMode::Bidirectional && child.items.len() == 2 {
                    let (a, ea) = &child.items[0];
                    let (b, eb) = &child.items[1];
                    if let Some(t) = backward_match(*a, *b) {
                        let (ex, ey) = if t.x == *a && t.y == *b { (ea, eb) } else { (eb, ea) };
                        run.expression = Some(Expr::bin(t.op, ex.clone(), ey.clone()).to_string());
                        run.intersection = Some(Intersection {
                            depth,
                            remaining: child.remaining().iter().map(format_rational).collect(),
                            target: format!("{}{}{}=24", format_rational(&t.x), t.op, format_rational(&t.y)),
                            history: child.history(),
                        });
                        next.push(child);
                        *run.forward_frontier.last_mut().expect("frontier") = parents;
                        run.forward_frontier.push(next);
                        break 'search;
                    }
                }
                if let Some(expr) = child.solution() {
                    run.expression = Some(expr);
                    next.push(child);
                    *run.forward_frontier.last_mut().expect("frontier") = parents;
                    run.forward_frontier.push(next);
                    break 'search;
                }
                next.push(child);
            }
        }
        *run.forward_frontier.last_mut().expect("frontier") = parents;
        run.forward_frontier.push(next);
    }
    run.frontier_sizes = run.forward_frontier.iter().map(Vec::len).collect();
    run.backend_calls = expander.backend_calls();
    run.malformed_proposals = expander.malformed();
    Ok(run)
}

/// A case counts as a success when a valid expression is returned exactly
/// when the instance is solvable.
pub fn score_case(numbers: &[i64], claimed: Option<&str>, solvable: bool) -> bool {
    match claimed {
        Some(expr) => solvable && validate_expression(numbers, expr),
        None => !solvable,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchmarkMode {
    /// Bidirectional search with the exhaustive expander.
    Oracle,
    /// Forward-only search with the exhaustive expander.
    Forward,
    /// Bidirectional search with backend-proposed expansions.
    Llm,
}

impl std::str::FromStr for BenchmarkMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "oracle" => Ok(BenchmarkMode::Oracle),
            "forward" => Ok(BenchmarkMode::Forward),
            "llm" => Ok(BenchmarkMode::Llm),
            other => Err(format!("unknown mode `{other}` (expected oracle, forward or llm)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub numbers: Vec<i64>,
    pub solvable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expression: Option<String>,
    pub success: bool,
    pub expansions: usize,
    pub backend_calls: usize,
    pub malformed_proposals: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meeting_depth: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub mode: BenchmarkMode,
    pub cases: Vec<CaseResult>,
    pub success_rate: f64,
    pub mean_expansions: f64,
    pub mean_backend_calls: f64,
}

impl BenchmarkReport {
    fn from_cases(mode: BenchmarkMode, cases: Vec<CaseResult>) -> Self {
        let n = cases.len().max(1) as f64;
        BenchmarkReport {
            mode,
            success_rate: cases.iter().filter(|c| c.success).count() as f64 / n,
            mean_expansions: cases.iter().map(|c| c.expansions as f64).sum::<f64>() / n,
            mean_backend_calls: cases.iter().map(|c| c.backend_calls as f64).sum::<f64>() / n,
            cases,
        }
    }

    pub fn solved(&self) -> usize {
        self.cases.iter().filter(|c| c.success).count()
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<14} {:<22} {:>8} {:>11} {:>6}\n",
            "case", "expression", "success", "expansions", "calls"
        ));
        for c in &self.cases {
            let nums: Vec<String> = c.numbers.iter().map(i64::to_string).collect();
            out.push_str(&format!(
                "{:<14} {:<22} {:>8} {:>11} {:>6}\n",
                nums.join(" "),
                c.expression.as_deref().unwrap_or("-"),
                if c.success { "yes" } else { "no" },
                c.expansions,
                c.backend_calls
            ));
        }
        out.push_str(&format!(
            "mode={:?} cases={} success={:.1}% mean_expansions={:.1} mean_backend_calls={:.2}\n",
            self.mode,
            self.cases.len(),
            100.0 * self.success_rate,
            self.mean_expansions,
            self.mean_backend_calls
        ));
        out
    }
}

fn run_case(numbers: &[i64], mode: BenchmarkMode, llm: Option<(&dyn Backend, &Template)>, seed: u64) -> CaseResult {
    let solvable = oracle_solve(numbers).is_some();
    let outcome = match (mode, llm) {
        (BenchmarkMode::Oracle, _) => run_bidirectional(numbers, &mut ExhaustiveExpander, SearchMode::Bidirectional),
        (BenchmarkMode::Forward, _) => run_bidirectional(numbers, &mut ExhaustiveExpander, SearchMode::ForwardOnly),
        (BenchmarkMode::Llm, Some((backend, template))) => {
            let mut expander = LlmExpander::new(backend, template, 0.7, seed);
            run_bidirectional(numbers, &mut expander, SearchMode::Bidirectional)
        }
        (BenchmarkMode::Llm, None) => Err(Error::Config("llm mode needs a backend".into())),
    };
    match outcome {
        Ok(run) => CaseResult {
            numbers: numbers.to_vec(),
            solvable,
            success: score_case(numbers, run.expression.as_deref(), solvable),
            meeting_depth: run.intersection.as_ref().map(|i| i.depth),
            expression: run.expression,
            expansions: run.expansions,
            backend_calls: run.backend_calls,
            malformed_proposals: run.malformed_proposals,
            error: None,
        },
        Err(e) => CaseResult {
            numbers: numbers.to_vec(),
            solvable,
            expression: None,
            success: false,
            expansions: 0,
            backend_calls: 0,
            malformed_proposals: 0,
            meeting_depth: None,
            error: Some(e.to_string()),
        },
    }
}

/// Run every case; failures are recorded per case. Exhaustive modes run
/// cases on worker threads, results keep input order.
pub fn benchmark(
    cases: &[Vec<i64>],
    mode: BenchmarkMode,
    llm: Option<(&dyn Backend, &Template)>,
    seed: u64,
) -> BenchmarkReport {
    let results = if mode == BenchmarkMode::Llm {
        cases.iter().map(|c| run_case(c, mode, llm, seed)).collect()
    } else {
        let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).clamp(1, 8);
        let chunk = cases.len().div_ceil(workers).max(1);
        std::thread::scope(|scope| {
            let handles: Vec<_> = cases
                .chunks(chunk)
                .map(|part| scope.spawn(move || part.iter().map(|c| run_case(c, mode, None, seed)).collect::<Vec<_>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("benchmark worker panicked"))
                .collect()
        })
    };
    BenchmarkReport::from_cases(mode, results)
}

pub fn parse_cases(text: &str) -> Result<Vec<Vec<i64>>> {
    let mut cases = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let nums: std::result::Result<Vec<i64>, _> = line.split_whitespace().map(str::parse).collect();
        match nums {
            Ok(n) if n.len() == 4 => cases.push(n),
            _ => {
                return Err(Error::Config(format!(
                    "case file line {}: expected four integers, got `{line}`",
                    lineno + 1
                )))
            }
        }
    }
    Ok(cases)
}

pub fn load_cases(path: impl AsRef<Path>) -> Result<Vec<Vec<i64>>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_cases(&text)
}

pub const DEFAULT_CASE_SEED: u64 = 24;
pub const DEFAULT_CASE_COUNT: usize = 95;

/// Distinct solvable multisets of 1..=13 drawn from a seeded generator.
pub fn generate_cases(seed: u64, count: usize) -> Vec<Vec<i64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(count);
    let mut solvable_cache: BTreeMap<Vec<i64>, bool> = BTreeMap::new();
    while out.len() < count {
        let mut nums: Vec<i64> = (0..4).map(|_| rng.gen_range(1..=13)).collect();
        nums.sort();
        if seen.contains(&nums) {
            continue;
        }
        let solvable = *solvable_cache
            .entry(nums.clone())
            .or_insert_with(|| oracle_solve(&nums).is_some());
        if solvable {
            seen.insert(nums.clone());
            out.push(nums);
        }
    }
    out
}

const DEFAULT_CASES: &str = include_str!("../data/game24_cases.txt");

/// The shipped 95-case solvable set.
pub fn default_cases() -> Vec<Vec<i64>> {
    parse_cases(DEFAULT_CASES).expect("shipped case file parses")
}

pub fn format_cases(cases: &[Vec<i64>]) -> String {
    cases
        .iter()
        .map(|c| c.iter().map(i64::to_string).collect::<Vec<_>>().join(" "))
        .collect::<Vec<_>>()
        .join("\n")
        + "\n"
}
