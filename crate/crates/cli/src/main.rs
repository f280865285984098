use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde_json::Value;

use mgrs_core::game24::{self, BenchmarkMode};
use mgrs_core::pipeline::BackendKind;
use mgrs_core::template::PromptTemplates;
use mgrs_core::{run_pipeline, Error, PipelineFailure, RunConfig, RunTrace, SelectionResult, WeightMode};

const EXIT_CONFIG: u8 = 1;
const EXIT_BACKEND: u8 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "mgrs",
    version,
    about = "Multi-chain reasoning with verification and graph-based answer selection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Answer one question.
    Solve {
        #[arg(long)]
        question: String,
        #[command(flatten)]
        run: RunArgs,
        /// Write the run trace (also on failure).
        #[arg(long)]
        trace_out: Option<PathBuf>,
        /// Write the weighted reasoning graph as DOT.
        #[arg(long)]
        dot_out: Option<PathBuf>,
    },
    /// Answer every question in a file, one per line.
    Batch {
        #[arg(long)]
        questions: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        /// Directory for per-question traces.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Run the Game of 24 benchmark.
    Game24 {
        /// Case file, four integers per line. Defaults to the shipped 95-case set.
        #[arg(long)]
        cases: Option<PathBuf>,
        #[arg(long, default_value = "oracle")]
        mode: BenchmarkMode,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        report_out: Option<PathBuf>,
    },
    /// Pretty-print a trace and optionally export its graph.
    Inspect {
        #[arg(long)]
        trace: PathBuf,
        /// DOT output path, `-` for stdout.
        #[arg(long)]
        dot: Option<PathBuf>,
    },
}

/// Run settings. Precedence: these flags, then `--config`, then environment,
/// then built-in defaults.
#[derive(Args, Debug, Default)]
struct RunArgs {
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    backend: Option<BackendKind>,
    /// Script file for the scripted backend.
    #[arg(long)]
    script: Option<PathBuf>,
    #[arg(long)]
    api_base: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    n_b: Option<u32>,
    #[arg(long)]
    n_s: Option<u32>,
    #[arg(long)]
    keep: Option<u32>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    rounds: Option<u32>,
    #[arg(long)]
    weight_mode: Option<WeightMode>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    no_verify: bool,
    #[arg(long)]
    no_cross_dependencies: bool,
    #[arg(long)]
    parallel: bool,
}

fn merge_json(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge_json(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl RunArgs {
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut config = RunConfig::default();
        config.backend.http = config.backend.http.with_env();
        let env_key = config.backend.http.api_key.clone();

        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            let overlay: Value =
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
            let mut merged = serde_json::to_value(&config)?;
            merge_json(&mut merged, overlay);
            config = serde_json::from_value(merged).with_context(|| format!("invalid config {}", path.display()))?;
            if config.backend.http.api_key.is_none() {
                config.backend.http.api_key = env_key;
            }
            let dir = path.parent().unwrap_or(Path::new(""));
            let t = &mut config.templates;
            for p in [
                &mut config.backend.script,
                &mut t.generation,
                &mut t.critique,
                &mut t.regeneration,
                &mut t.divergence,
                &mut t.dependencies,
                &mut t.judge,
                &mut t.game24_propose,
            ]
            .into_iter()
            .flatten()
            {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }

        if let Some(v) = self.backend {
            config.backend.kind = v;
        }
        if let Some(v) = &self.script {
            config.backend.script = Some(v.clone());
        }
        if let Some(v) = &self.api_base {
            config.backend.http.base_url = v.clone();
        }
        if let Some(v) = &self.model {
            config.backend.http.model = v.clone();
        }
        macro_rules! set {
            ($($field:ident),*) => { $( if let Some(v) = self.$field { config.$field = v; } )* };
        }
        set!(n_b, n_s, keep, threshold, rounds, weight_mode, temperature, seed);
        if self.no_verify {
            config.verify = false;
        }
        if self.no_cross_dependencies {
            config.cross_dependencies = false;
        }
        if self.parallel {
            config.parallel = true;
        }
        config.validate()?;
        Ok(config)
    }
}

fn ranking_table(selection: &SelectionResult) -> String {
    let mut out = format!(
        "{:<4} {:<24} {:>12} {:>6} {:>11}\n",
        "rank", "answer", "cumulative", "votes", "perplexity"
    );
    for (i, c) in selection.ranking.iter().enumerate() {
        let ppl = c.mean_perplexity.map_or("-".to_string(), |p| format!("{p:.4}"));
        out.push_str(&format!(
            "{:<4} {:<24} {:>12.6} {:>6} {:>11}\n",
            i + 1,
            c.answer_value,
            c.cumulative,
            c.votes,
            ppl
        ));
    }
    out
}

fn write_trace(trace: &RunTrace, path: &Path) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    trace.save(path)?;
    info!("trace written to {}", path.display());
    Ok(())
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    if path == Path::new("-") {
        print!("{text}");
        return Ok(());
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn solve_one(
    question: &str,
    config: &RunConfig,
    backend: &dyn mgrs_core::Backend,
    trace_out: Option<&Path>,
) -> anyhow::Result<RunTrace> {
    let outcome = run_pipeline(question, config, backend);
    let trace = match &outcome {
        Ok(t) => t,
        Err(PipelineFailure { trace, .. }) => trace.as_ref(),
    };
    if let Some(path) = trace_out {
        write_trace(trace, path)?;
    }
    outcome.map_err(anyhow::Error::new)
}

fn cmd_solve(question: &str, run: &RunArgs, trace_out: Option<&Path>, dot_out: Option<&Path>) -> anyhow::Result<()> {
    let config = run.resolve()?;
    let backend = match config.backend.build() {
        Ok(b) => b,
        Err(e) => {
            if let Some(path) = trace_out {
                let kind = serde_json::to_value(config.backend.kind)?;
                let kind = kind.as_str().unwrap_or_default();
                write_trace(&RunTrace::aborted(question, &config, kind, &e), path)?;
            }
            return Err(e.into());
        }
    };
    let trace = solve_one(question, &config, backend.as_ref(), trace_out)?;
    let selection = trace.selection.as_ref().expect("complete trace has a selection");
    print!("{}", ranking_table(selection));
    println!("answer: {}", selection.chosen.answer_value);
    println!("backend calls: {}", trace.calls.total);
    if let (Some(path), Some(graph)) = (dot_out, trace.graph.as_ref()) {
        write_text(path, &graph.to_dot())?;
    }
    Ok(())
}

fn cmd_batch(path: &Path, run: &RunArgs, out_dir: Option<&Path>) -> anyhow::Result<()> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let questions: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    if questions.is_empty() {
        bail!("{} contains no questions", path.display());
    }
    let config = run.resolve()?;
    let backend = config.backend.build()?;
    let mut first_error: Option<anyhow::Error> = None;
    println!("{:<5} {:<10} {:<24} question", "#", "status", "answer");
    for (i, q) in questions.iter().enumerate() {
        let path = out_dir.map(|d| d.join(format!("q{:04}.json", i + 1)));
        match solve_one(q, &config, backend.as_ref(), path.as_deref()) {
            Ok(trace) => println!(
                "{:<5} {:<10} {:<24} {q}",
                i + 1,
                "ok",
                trace.chosen_answer().unwrap_or("-")
            ),
            Err(e) => {
                warn!("question {}: {e:#}", i + 1);
                println!("{:<5} {:<10} {:<24} {q}", i + 1, "failed", "-");
                let backend_failure = exit_code(&e) == EXIT_BACKEND;
                if first_error.is_none() || backend_failure {
                    first_error = Some(e);
                }
                if backend_failure {
                    break;
                }
            }
        }
    }
    match first_error {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn cmd_game24(
    cases: Option<&Path>,
    mode: BenchmarkMode,
    run: &RunArgs,
    report_out: Option<&Path>,
) -> anyhow::Result<()> {
    let cases = match cases {
        Some(p) => game24::load_cases(p)?,
        None => game24::default_cases(),
    };
    let report = if mode == BenchmarkMode::Llm {
        let config = run.resolve()?;
        let templates = PromptTemplates::load(&config.templates)?;
        let backend = config.backend.build()?;
        game24::benchmark(
            &cases,
            mode,
            Some((backend.as_ref(), &templates.game24_propose)),
            config.seed,
        )
    } else {
        game24::benchmark(&cases, mode, None, 0)
    };
    print!("{}", report.table());
    if let Some(path) = report_out {
        write_text(path, &(serde_json::to_string_pretty(&report)? + "\n"))?;
    }
    if let Some(err) = report.cases.iter().find_map(|c| c.error.as_deref()) {
        bail!(Error::Backend(mgrs_core::BackendError::BackendUnavailable(
            err.to_string()
        )));
    }
    Ok(())
}

fn cmd_inspect(path: &Path, dot: Option<&Path>) -> anyhow::Result<()> {
    let trace = RunTrace::load(path)?;
    println!("question: {}", trace.question);
    println!(
        "schema_version: {}  complete: {}  backend: {}",
        trace.schema_version, trace.complete, trace.backend_id
    );
    if let Some(e) = &trace.error {
        println!("error: {e}");
    }
    println!("stages: {}", trace.stages_completed.join(" -> "));
    println!(
        "chains: {} sampled, {} representatives, {} verified",
        trace.raw_chains.len(),
        trace.representatives.len(),
        trace.verified_chains.len()
    );
    for c in &trace.verified_chains {
        let ppl = c.confidence.map_or("-".to_string(), |p| format!("{p:.4}"));
        println!(
            "  {} ({} steps, perplexity {ppl}) -> {}",
            c.chain_id,
            c.steps.len(),
            c.answer_text
        );
    }
    for x in &trace.cross_checks {
        println!("  cross-check {} vs {}: {:?}", x.compared.0, x.compared.1, x.resolution);
    }
    if let Some(g) = &trace.graph {
        println!(
            "graph: {} nodes, {} edges ({})",
            g.nodes.len(),
            g.edges.len(),
            trace.edge_convention
        );
    }
    let stages: Vec<String> = trace.calls.per_stage.iter().map(|(k, v)| format!("{k}={v}")).collect();
    println!("backend calls: {} ({})", trace.calls.total, stages.join(", "));
    if let Some(sel) = &trace.selection {
        print!("{}", ranking_table(sel));
        println!("answer: {}", sel.chosen.answer_value);
    }
    if let Some(path) = dot {
        let graph = trace.graph.as_ref().ok_or_else(|| anyhow!("trace has no graph"))?;
        write_text(path, &graph.to_dot())?;
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return if e.is_backend() { EXIT_BACKEND } else { EXIT_CONFIG };
        }
        if let Some(f) = cause.downcast_ref::<PipelineFailure>() {
            return if f.error.is_backend() {
                EXIT_BACKEND
            } else {
                EXIT_CONFIG
            };
        }
    }
    EXIT_CONFIG
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Solve {
            question,
            run,
            trace_out,
            dot_out,
        } => cmd_solve(&question, &run, trace_out.as_deref(), dot_out.as_deref()),
        Command::Batch {
            questions,
            run,
            out_dir,
        } => cmd_batch(&questions, &run, out_dir.as_deref()),
        Command::Game24 {
            cases,
            mode,
            run,
            report_out,
        } => cmd_game24(cases.as_deref(), mode, &run, report_out.as_deref()),
        Command::Inspect { trace, dot } => cmd_inspect(&trace, dot.as_deref()),
    }
}

fn describe(e: &anyhow::Error) -> String {
    let mut message = e.to_string();
    for cause in e.chain().skip(1) {
        let cause = cause.to_string();
        if !message.contains(&cause) {
            message = format!("{message}: {cause}");
        }
    }
    message
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
