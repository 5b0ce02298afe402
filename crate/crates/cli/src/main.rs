//! `scatter`: run the expansion pipeline, the A/B experiment, and the
//! reports over a finished experiment.

mod report;
mod run_dir;

use std::fs;
use std::io::{IsTerminal, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use tracing::{info, warn};
use tracing_subscriber::EnvFilter;

use scatter_core::eval::{EvalError, ExperimentTable, Harness};
use scatter_core::fixtures::{builtin_rulebook, embedded_contract_innovation};
use scatter_core::gateway::{
    Cassette, CompletionRequest, Decoding, Gateway, GatewayError, HttpBackend, Rulebook,
};
use scatter_core::model::{
    builtin_lifecycle_fixture, validate_process_spec, InnovationInput, ProcessSpec, ScatterResult,
    ScopeKind,
};
use scatter_core::prompts::{PromptError, PromptRegistry, Role};
use scatter_core::scatter::{ScatterConfig, ScatterError, ScatterPipeline};
use scatter_core::stats::{summarize, StatsError};

use run_dir::{io_failure, RunDir};

const BUILTIN_PROCESS: &str = "builtin:lifecycle";
const BUILTIN_INNOVATION: &str = "builtin:embedded-contract";

#[derive(Parser)]
#[command(
    name = "scatter",
    version,
    about = "Spread a local process improvement to every other segment through an LLM"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Expand one innovation across a process.
    Run(PipelineArgs),
    /// Run the Method A / Method B comparison for N rounds.
    Eval {
        #[command(flatten)]
        pipeline: PipelineArgs,
        #[arg(long, default_value_t = 20)]
        rounds: usize,
    },
    /// Paired significance tests over a finished experiment.
    Stats(ReportArgs),
    /// Round-by-round comparison table of a finished experiment.
    Report(ReportArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum BackendArg {
    Http,
    Mock,
    Replay,
}

#[derive(Args)]
struct PipelineArgs {
    /// Process definition (JSON). Defaults to the builtin contract lifecycle.
    #[arg(long)]
    process: Option<PathBuf>,
    /// Innovation input (JSON). Defaults to the embedded-contract example.
    #[arg(long)]
    innovation: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = BackendArg::Mock)]
    backend: BackendArg,
    /// Cassette to replay (replay backend only).
    #[arg(long)]
    cassette: Option<PathBuf>,
    /// Mock rulebook (JSON) replacing the builtin one.
    #[arg(long)]
    rulebook: Option<PathBuf>,
    /// Directory of `<role>.<variant>.prompt` files.
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    #[arg(long, default_value_t = 3)]
    max_attempts: u32,
    #[arg(long, default_value = "gpt-4o")]
    model: String,
    #[arg(long, default_value_t = 0.7)]
    temperature: f64,
    #[arg(long, default_value_t = 1024)]
    max_tokens: u32,
    #[arg(long)]
    seed: Option<i64>,
    #[arg(long, default_value_t = 4)]
    parallelism: usize,
    /// Overrides LLM_BASE_URL for the http backend.
    #[arg(long)]
    base_url: Option<String>,
    /// Parent directory of run directories.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Run directory name; defaults to a timestamped slug.
    #[arg(long)]
    run_id: Option<String>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory holding table.json.
    #[arg(long)]
    run: PathBuf,
}

/// Error classes and their exit codes.
#[derive(Debug)]
pub enum Failure {
    Validation(String),
    Backend(String),
    Parse(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Backend(_) => 2,
            Failure::Parse(_) => 3,
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Validation(m) => format!("error: {m}"),
            Failure::Backend(m) => format!("backend error: {m}"),
            Failure::Parse(m) => format!("parse error: {m}"),
        }
    }
}

impl From<GatewayError> for Failure {
    fn from(e: GatewayError) -> Self {
        match e {
            GatewayError::InvalidRequest(m) => Failure::Validation(m),
            other => Failure::Backend(other.to_string()),
        }
    }
}

impl From<PromptError> for Failure {
    fn from(e: PromptError) -> Self {
        Failure::Validation(e.to_string())
    }
}

impl From<ScatterError> for Failure {
    fn from(e: ScatterError) -> Self {
        match e {
            ScatterError::Gateway(g) => g.into(),
            ScatterError::OriginUnresolvable | ScatterError::EmptyCompletion { .. } => {
                Failure::Parse(e.to_string())
            }
            ScatterError::Prompt(_)
            | ScatterError::Spec(_)
            | ScatterError::EmptyMarkers(_)
            | ScatterError::InvalidConfig(_) => Failure::Validation(e.to_string()),
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Scatter(s) => s.into(),
            EvalError::Gateway(g) => g.into(),
            EvalError::Prompt(p) => p.into(),
            EvalError::MalformedOutput { .. } => Failure::Parse(e.to_string()),
            EvalError::NoRounds => Failure::Validation("rounds must be ≥ 1".into()),
        }
    }
}

/// Everything needed to replay a run given its cassette.
#[derive(Debug, Serialize, Deserialize)]
struct RunManifest {
    run_id: String,
    command: String,
    spec_path: String,
    innovation_path: String,
    backend: String,
    model: String,
    decoding: Decoding,
    tau: f64,
    max_attempts: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    rounds: Option<usize>,
    template_dir: Option<String>,
    template_digest: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    rulebook: Option<String>,
    cassette: Option<String>,
    tool_version: String,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .init();
    // usage errors are validation errors (exit 1), not clap's default 2
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(&args),
        Command::Eval { pipeline, rounds } => cmd_eval(&pipeline, rounds),
        Command::Stats(args) => cmd_stats(&args),
        Command::Report(args) => cmd_report(&args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("{}", failure.message());
            ExitCode::from(failure.code())
        }
    }
}

// --- setup -------------------------------------------------------------------

fn read_input(path: &Path, what: &str) -> Result<String, Failure> {
    fs::read_to_string(path)
        .map_err(|e| Failure::Validation(format!("{what} not found: {} ({e})", path.display())))
}

fn load_process(path: Option<&Path>) -> Result<ProcessSpec, Failure> {
    let spec = match path {
        None => builtin_lifecycle_fixture(),
        Some(p) => ProcessSpec::from_json(&read_input(p, "process spec")?).map_err(|e| {
            Failure::Validation(format!("invalid process spec {}: {e}", p.display()))
        })?,
    };
    validate_process_spec(spec)
        .map_err(|e| Failure::Validation(format!("invalid process spec: {e}")))
}

fn load_innovation(path: Option<&Path>, spec: &ProcessSpec) -> Result<InnovationInput, Failure> {
    let input = match path {
        None => embedded_contract_innovation(),
        Some(p) => serde_json::from_str(&read_input(p, "innovation input")?).map_err(|e| {
            Failure::Validation(format!("invalid innovation input {}: {e}", p.display()))
        })?,
    };
    input
        .validate(spec)
        .map_err(|e| Failure::Validation(format!("invalid innovation input: {e}")))?;
    Ok(input)
}

struct Setup {
    spec: ProcessSpec,
    input: InnovationInput,
    prompts: PromptRegistry,
    gateway: Gateway,
    config: ScatterConfig,
    run: RunDir,
    manifest: RunManifest,
}

impl Setup {
    fn new(args: &PipelineArgs, command: &str, rounds: Option<usize>) -> Result<Self, Failure> {
        let spec = load_process(args.process.as_deref())?;
        let input = load_innovation(args.innovation.as_deref(), &spec)?;
        let prompts = match &args.templates {
            Some(dir) => PromptRegistry::load_dir(dir).map_err(|e| {
                Failure::Validation(format!("cannot load templates from {}: {e}", dir.display()))
            })?,
            None => PromptRegistry::builtin(),
        };
        let decoding = Decoding {
            model: args.model.clone(),
            temperature: args.temperature,
            max_tokens: args.max_tokens,
            seed: args.seed,
        };
        CompletionRequest::new(Role::Diff, "-", &decoding).validate()?;
        let config = ScatterConfig {
            variant: 0,
            max_attempts: args.max_attempts,
            tau: args.tau,
            decoding: decoding.clone(),
        };
        config.validate()?;
        if args.parallelism == 0 {
            return Err(Failure::Validation("parallelism must be ≥ 1".into()));
        }
        if args.cassette.is_some() && args.backend != BackendArg::Replay {
            return Err(Failure::Validation(
                "--cassette requires --backend replay".into(),
            ));
        }
        if args.rulebook.is_some() && args.backend != BackendArg::Mock {
            return Err(Failure::Validation(
                "--rulebook requires --backend mock".into(),
            ));
        }

        let gateway = match args.backend {
            BackendArg::Mock => {
                let book = match &args.rulebook {
                    Some(p) => Rulebook::from_json(&read_input(p, "rulebook")?).map_err(|e| {
                        Failure::Validation(format!("invalid rulebook {}: {e}", p.display()))
                    })?,
                    None => builtin_rulebook(&prompts),
                };
                Gateway::mock(book).recording()
            }
            BackendArg::Replay => {
                let path = args.cassette.as_deref().ok_or_else(|| {
                    Failure::Validation("--backend replay requires --cassette".into())
                })?;
                let cassette = if path.exists() {
                    Cassette::load(path)?
                } else {
                    warn!(path = %path.display(), "cassette file does not exist; replaying an empty cassette");
                    Cassette::new()
                };
                Gateway::replay(cassette)
            }
            BackendArg::Http => Gateway::new(HttpBackend::from_env(args.base_url.as_deref())?).recording(),
        }
        .with_parallelism(args.parallelism);

        let run_id = args
            .run_id
            .clone()
            .unwrap_or_else(|| format!("{command}-{}", chrono::Utc::now().format("%Y%m%d-%H%M%S")));
        let run = RunDir::create(&args.out, &run_id)?;
        let display = |p: &Option<PathBuf>, builtin: &str| {
            p.as_ref()
                .map_or(builtin.to_string(), |p| p.display().to_string())
        };
        let manifest = RunManifest {
            run_id,
            command: command.to_string(),
            spec_path: display(&args.process, BUILTIN_PROCESS),
            innovation_path: display(&args.innovation, BUILTIN_INNOVATION),
            backend: gateway.kind().to_string(),
            model: decoding.model.clone(),
            decoding,
            tau: config.tau,
            max_attempts: config.max_attempts,
            rounds,
            template_dir: args.templates.as_ref().map(|p| p.display().to_string()),
            template_digest: prompts.digest(),
            rulebook: args.rulebook.as_ref().map(|p| p.display().to_string()),
            cassette: match args.backend {
                BackendArg::Replay => args.cassette.as_ref().map(|p| p.display().to_string()),
                _ => Some("cassette.json".to_string()),
            },
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        };
        run.write("manifest.json", &to_json(&manifest))?;
        info!(run = %run.path().display(), "run directory created");
        Ok(Setup {
            spec,
            input,
            prompts,
            gateway,
            config,
            run,
            manifest,
        })
    }

    /// Persists the recorded cassette, if any.
    fn save_cassette(&self) -> Result<(), Failure> {
        if let Some(cassette) = self.gateway.cassette() {
            self.run.write("cassette.json", &cassette.to_json())?;
        }
        Ok(())
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    s
}

// --- commands ------------------------------------------------------------------

fn cmd_run(args: &PipelineArgs) -> Result<(), Failure> {
    let setup = Setup::new(args, "run", None)?;
    let outcome = ScatterPipeline::new(&setup.gateway, &setup.prompts, setup.config.clone())
        .run_scatter(&setup.input, &setup.spec);
    setup.save_cassette()?;
    let result = outcome?;
    setup.run.write("result.json", &to_json(&result))?;
    print_summary(&result, &setup);
    Ok(())
}

fn print_summary(result: &ScatterResult, setup: &Setup) {
    println!(
        "run {} ({})",
        setup.manifest.run_id,
        setup.run.path().display()
    );
    println!(
        "local innovation at `{}`: {} (coupling {:.3})",
        result.local.origin, result.local.summary, result.local.coupling_before
    );
    println!(
        "generalized after {} attempt(s), coupling {:.3}{}: {}",
        result.generalized.attempts,
        result.generalized.coupling_after,
        if result.generalized.reduced {
            ""
        } else {
            " (not reduced)"
        },
        result.generalized.text
    );
    match &result.verdict.kind {
        ScopeKind::Global => println!("verdict: GLOBAL, no expansion"),
        ScopeKind::Local(id) => println!("verdict: LOCAL ({id})"),
    }
    for app in &result.applications {
        let mark = if app.applicable { "+" } else { "-" };
        let text = app.adapted_text.lines().next().unwrap_or_default();
        println!(
            "  {mark} {} [similarity {:.2}]: {text}",
            app.segment, app.similarity
        );
    }
}

fn cmd_eval(args: &PipelineArgs, rounds: usize) -> Result<(), Failure> {
    if rounds == 0 {
        return Err(Failure::Validation("rounds must be ≥ 1".into()));
    }
    let setup = Setup::new(args, "eval", Some(rounds))?;
    let jsonl_path = setup.run.file("rounds.jsonl");
    let mut jsonl = setup.run.create_stream("rounds.jsonl")?;
    let mut write_error = None;
    let harness = Harness::new(&setup.gateway, &setup.prompts, setup.config.clone());
    let outcome = harness.run_experiment(rounds, &setup.input, &setup.spec, |record| {
        let line = serde_json::to_string(record).expect("record serializes");
        if let Err(e) = writeln!(jsonl, "{line}") {
            write_error.get_or_insert(e);
        }
        eprintln!(
            "round {:>3} method {}: {} items, {} stages",
            record.round, record.method, record.metrics.items_count, record.metrics.stages_covered
        );
    });
    if let Some(e) = write_error {
        return Err(io_failure(&jsonl_path, e));
    }
    setup.save_cassette()?;
    let table = match outcome {
        Ok(table) => table,
        Err(aborted) => {
            if !aborted.partial.rows.is_empty() {
                setup
                    .run
                    .write("table.partial.json", &aborted.partial.to_json())?;
            }
            let round = aborted.round;
            let method = aborted.method;
            let failure: Failure = aborted.source.into();
            eprintln!("experiment aborted in round {round} (method {method})");
            return Err(failure);
        }
    };
    setup.run.write("table.json", &table.to_json())?;
    let avg = &table.averages;
    println!(
        "run {} ({})",
        setup.manifest.run_id,
        setup.run.path().display()
    );
    println!(
        "{} rounds; mean items A {:.2} B {:.2}; mean stages A {:.2} B {:.2}",
        table.rows.len(),
        avg.a.items,
        avg.b.items,
        avg.a.stages,
        avg.b.stages
    );
    Ok(())
}

fn load_table(run: &RunDir) -> Result<ExperimentTable, Failure> {
    let path = run.file("table.json");
    let json = fs::read_to_string(&path).map_err(|_| {
        Failure::Validation(format!("experiment table not found: {}", path.display()))
    })?;
    ExperimentTable::from_json(&json).map_err(|e| {
        Failure::Validation(format!("invalid experiment table {}: {e}", path.display()))
    })
}

fn cmd_stats(args: &ReportArgs) -> Result<(), Failure> {
    let run = RunDir::open(&args.run)?;
    let table = load_table(&run)?;
    let report = summarize(&table).map_err(|e| match e {
        StatsError::TooFewRounds(n) => Failure::Validation(format!(
            "significance tests need at least 2 rounds, table has {n}"
        )),
        other => Failure::Validation(other.to_string()),
    })?;
    let markdown = report.to_markdown();
    run.write("stats.md", &markdown)?;
    run.write("stats.csv", &report.to_csv())?;
    print!("{markdown}");
    Ok(())
}

fn cmd_report(args: &ReportArgs) -> Result<(), Failure> {
    let run = RunDir::open(&args.run)?;
    let table = load_table(&run)?;
    let markdown = report::to_markdown(&table);
    run.write("report.md", &markdown)?;
    run.write("report.csv", &report::to_csv(&table))?;
    print!("{markdown}");
    Ok(())
}
