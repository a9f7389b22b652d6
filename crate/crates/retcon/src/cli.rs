//! Command-line front end. [`run`] takes its streams as arguments so the
//! whole surface is testable in-process.

use std::ffi::OsString;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use retcon_core::grid::select_examples;
use retcon_core::{
    build_few_shot, build_retcon, build_zero_shot, CefrLevel, Conversation, Corpus, InstructionFrequency, PromptTemplateSet, Technique,
};
use serde_json::json;

use crate::chat::{run_chat, ChatSettings};
use crate::corpus::{bundled_corpus, load_corpus_file};
use crate::gateway::{Backend, Gateway, HttpBackend, HttpBackendConfig, MockBackend, MockBank};
use crate::harness::{read_records, run_to_log, Experiment, GridConfig, RunOptions};
use crate::report::{aggregate_partial, emit_report, summary_table};
use crate::scoring::{EvaluatorBackend, EvaluatorConfig, SharedEvaluator};
use crate::templates::load_templates;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

pub const RESULTS_FILE: &str = "results.jsonl";
pub const REPORT_FILE: &str = "report.csv";
pub const METADATA_FILE: &str = "run.json";

#[derive(Debug, Parser)]
#[command(name = "retcon", version, about = "Turn-level difficulty control for tutoring conversations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the prompt for one conversation prefix.
    BuildPrompt(BuildPromptArgs),
    /// Score texts (arguments, or one per stdin line).
    Score(ScoreArgs),
    /// Run an experiment grid and write results and report.
    Run(RunArgs),
    /// Rebuild the CSV report from a results log.
    Report(ReportArgs),
    /// Interactive session with a controllable assistant.
    Chat(ChatArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FrequencyArg {
    Assistant,
    Every,
}

impl From<FrequencyArg> for InstructionFrequency {
    fn from(f: FrequencyArg) -> Self {
        match f {
            FrequencyArg::Assistant => InstructionFrequency::AssistantTurnsOnly,
            FrequencyArg::Every => InstructionFrequency::EveryTurn,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvaluatorKind {
    Heuristic,
    Remote,
}

fn parse_level(s: &str) -> Result<CefrLevel, String> {
    s.parse().map_err(|e: retcon_core::cefr::UnknownLevel| e.to_string())
}

fn parse_technique(s: &str) -> Result<Technique, String> {
    s.parse()
}

#[derive(Debug, Args)]
pub struct EvaluatorArgs {
    /// Difficulty scorer [default: heuristic, or the config file's choice]
    #[arg(long, value_enum)]
    pub evaluator: Option<EvaluatorKind>,
    /// Base URL of the remote scoring service.
    #[arg(long, value_name = "URL")]
    pub evaluator_url: Option<String>,
    #[arg(long, value_name = "MS")]
    pub evaluator_timeout_ms: Option<u64>,
}

impl EvaluatorArgs {
    fn apply(&self, mut config: EvaluatorConfig) -> EvaluatorConfig {
        if let Some(kind) = self.evaluator {
            config.backend = match kind {
                EvaluatorKind::Heuristic => EvaluatorBackend::Heuristic,
                EvaluatorKind::Remote => EvaluatorBackend::Remote,
            };
        }
        if let Some(url) = &self.evaluator_url {
            config.remote_endpoint = Some(url.clone());
        }
        if let Some(ms) = self.evaluator_timeout_ms {
            config.timeout_ms = ms;
        }
        config
    }
}

#[derive(Debug, Args)]
pub struct BackendArgs {
    #[arg(long, value_enum, default_value = "mock")]
    pub backend: BackendKind,
    /// Mock reply bank (JSON); the built-in bank otherwise.
    #[arg(long, value_name = "PATH")]
    pub mock_bank: Option<PathBuf>,
    /// Offset the mock's replies by this much difficulty (repeatable).
    #[arg(long, value_name = "DELTA", allow_negative_numbers = true)]
    pub mock_offset: Vec<f64>,
    /// JSON array of raw replies the mock returns in order.
    #[arg(long, value_name = "PATH", conflicts_with_all = ["mock_bank", "mock_offset"])]
    pub mock_script: Option<PathBuf>,
    /// Delay each mock reply.
    #[arg(long, value_name = "MS", hide = true)]
    pub mock_latency_ms: Option<u64>,
    /// HTTP adapter config (JSON: endpoint, model, auth_token_env, ...).
    #[arg(long, value_name = "PATH")]
    pub http_config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BuildPromptArgs {
    #[arg(long, value_parser = parse_technique)]
    pub technique: Technique,
    /// Number of example conversations.
    #[arg(long, default_value_t = 0)]
    pub examples: usize,
    #[arg(long, value_parser = parse_level)]
    pub target: CefrLevel,
    #[arg(long, value_enum, default_value = "assistant")]
    pub frequency: FrequencyArg,
    /// Corpus file; the bundled corpus otherwise.
    #[arg(long, value_name = "PATH")]
    pub corpus: Option<PathBuf>,
    /// Conversation id supplying the history.
    #[arg(long)]
    pub conversation: String,
    /// Number of history turns to include.
    #[arg(long, default_value_t = 0)]
    pub turns: usize,
    /// Seed for example selection.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_name = "PATH")]
    pub templates: Option<PathBuf>,
    /// Report length and instruction count on stderr.
    #[arg(long)]
    pub stats: bool,
    #[command(flatten)]
    pub evaluator: EvaluatorArgs,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    pub texts: Vec<String>,
    #[command(flatten)]
    pub evaluator: EvaluatorArgs,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Output directory for results, report and metadata.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Continue an interrupted run in the same directory.
    #[arg(long)]
    pub resume: bool,
    /// Override the config's master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the corpus path.
    #[arg(long, value_name = "PATH")]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub concurrency: Option<usize>,
    /// Stop after this many queries.
    #[arg(long)]
    pub limit: Option<usize>,
    #[command(flatten)]
    pub backend: BackendArgs,
    #[command(flatten)]
    pub evaluator: EvaluatorArgs,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Results log to read.
    #[arg(long, value_name = "PATH", required_unless_present = "out")]
    pub log: Option<PathBuf>,
    /// Run directory; reads its results log and writes its report file.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ChatArgs {
    /// Initial goal level.
    #[arg(long, value_parser = parse_level, default_value = "B1")]
    pub target: CefrLevel,
    #[arg(long, value_enum, default_value = "assistant")]
    pub frequency: FrequencyArg,
    /// Number of corpus conversations used as examples.
    #[arg(long, default_value_t = 0)]
    pub examples: usize,
    #[arg(long, value_name = "PATH")]
    pub corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_name = "PATH")]
    pub templates: Option<PathBuf>,
    #[command(flatten)]
    pub backend: BackendArgs,
    #[command(flatten)]
    pub evaluator: EvaluatorArgs,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(String),
}

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

/// Parses `args` (including the program name) and executes the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I, stdin: &mut dyn BufRead, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(stderr, "{}", e.render());
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::BuildPrompt(a) => build_prompt(a, stdout, stderr),
        Command::Score(a) => score(a, stdin, stdout),
        Command::Run(a) => run_grid_cmd(a, stdout, stderr),
        Command::Report(a) => report(a, stdout, stderr),
        Command::Chat(a) => chat(a, stdin, stdout),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Usage(m)) => {
            let _ = writeln!(stderr, "error: {m}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(m)) => {
            let _ = writeln!(stderr, "error: {m}");
            EXIT_RUNTIME
        }
    }
}

/// Entry point for the binary.
pub fn main_from_env() -> i32 {
    let stdin = std::io::stdin();
    let mut stdin = stdin.lock();
    let mut stdout = std::io::stdout();
    let mut stderr = std::io::stderr();
    let code = run(std::env::args_os(), &mut stdin, &mut stdout, &mut stderr);
    let _ = stdout.flush();
    code
}

fn load_corpus_arg(path: Option<&Path>) -> Result<Corpus, Failure> {
    match path {
        Some(p) => load_corpus_file(p).map_err(usage),
        None => Ok(bundled_corpus()),
    }
}

fn load_templates_arg(path: Option<&Path>) -> Result<PromptTemplateSet, Failure> {
    match path {
        Some(p) => load_templates(p).map_err(usage),
        None => Ok(PromptTemplateSet::default()),
    }
}

fn build_evaluator(args: &EvaluatorArgs, base: EvaluatorConfig) -> Result<SharedEvaluator, Failure> {
    args.apply(base).build().map_err(usage)
}

fn build_backend(args: &BackendArgs, templates: &PromptTemplateSet) -> Result<Box<dyn Backend>, Failure> {
    match args.backend {
        BackendKind::Http => {
            let path = args
                .http_config
                .as_ref()
                .ok_or_else(|| usage("--backend http needs --http-config"))?;
            let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            let config = HttpBackendConfig::from_json(&text).map_err(usage)?;
            Ok(Box::new(HttpBackend::new(&config).map_err(usage)?))
        }
        BackendKind::Mock => {
            let mock = if let Some(path) = &args.mock_script {
                let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
                let replies: Vec<String> = serde_json::from_str(&text).map_err(usage)?;
                MockBackend::scripted(replies)
            } else {
                let bank = match &args.mock_bank {
                    Some(path) => {
                        let text =
                            std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
                        MockBank::from_json(&text).map_err(usage)?
                    }
                    None => MockBank::builtin(),
                };
                if args.mock_offset.is_empty() {
                    MockBackend::compliant(bank)
                } else {
                    MockBackend::noisy(bank, args.mock_offset.clone())
                }
            };
            let mock = mock.with_templates(templates.clone());
            Ok(Box::new(match args.mock_latency_ms {
                Some(ms) => mock.with_latency(Duration::from_millis(ms)),
                None => mock,
            }))
        }
    }
}

fn build_prompt(a: BuildPromptArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32, Failure> {
    let corpus = load_corpus_arg(a.corpus.as_deref())?;
    let templates = load_templates_arg(a.templates.as_deref())?;
    let conversation = corpus
        .get(&a.conversation)
        .ok_or_else(|| usage(format!("no conversation `{}` in corpus", a.conversation)))?;
    let prefix = conversation.response_prefix(a.turns).map_err(usage)?;
    let pool: Vec<Conversation> = corpus
        .conversations()
        .iter()
        .filter(|c| c.id() != a.conversation)
        .cloned()
        .collect();
    if a.examples > pool.len() {
        return Err(usage(format!(
            "--examples {} exceeds the {} other conversations in the corpus",
            a.examples,
            pool.len()
        )));
    }
    let evaluator = build_evaluator(&a.evaluator, EvaluatorConfig::default())?;
    let prompt = match a.technique {
        Technique::ZeroShot => build_zero_shot(&templates, &prefix, a.target),
        Technique::FewShot => {
            let examples = select_examples(&pool, a.examples, a.seed, &*evaluator).map_err(runtime)?;
            build_few_shot(&templates, &examples, &prefix, a.target)
        }
        Technique::Retcon => {
            let examples = retcon_core::grid::select_conversations(&pool, a.examples, a.seed).map_err(usage)?;
            build_retcon(&templates, &examples, &prefix, a.target, &*evaluator, a.frequency.into())
        }
    }
    .map_err(runtime)?;
    stdout.write_all(prompt.text.as_bytes()).map_err(runtime)?;
    if a.stats {
        writeln!(
            stderr,
            "char_length: {}\ninstruction_block_count: {}",
            prompt.char_length, prompt.instruction_block_count
        )
        .map_err(runtime)?;
    }
    Ok(EXIT_OK)
}

fn score(a: ScoreArgs, stdin: &mut dyn BufRead, stdout: &mut dyn Write) -> Result<i32, Failure> {
    let evaluator = build_evaluator(&a.evaluator, EvaluatorConfig::default())?;
    let texts: Vec<String> = if a.texts.is_empty() {
        stdin
            .lines()
            .collect::<Result<Vec<_>, _>>()
            .map_err(runtime)?
            .into_iter()
            .filter(|l| !l.trim().is_empty())
            .collect()
    } else {
        a.texts
    };
    for text in &texts {
        let s = evaluator.score(text).map_err(runtime)?;
        writeln!(stdout, "{:.6}\t{}", s.value(), s.level()).map_err(runtime)?;
    }
    Ok(EXIT_OK)
}

fn run_grid_cmd(a: RunArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32, Failure> {
    // everything that can be a usage error is checked before touching --out
    let mut config = GridConfig::load(&a.config).map_err(usage)?;
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    if let Some(corpus) = &a.corpus {
        config.corpus_path = Some(corpus.clone());
    }
    if let Some(c) = a.concurrency {
        config.concurrency = c;
    }
    config.evaluator = a.evaluator.apply(config.evaluator);
    let experiment = Experiment::from_config(config).map_err(usage)?;
    let backend = build_backend(&a.backend, &experiment.templates)?;
    let log_path = a.out.join(RESULTS_FILE);
    if log_path.exists() && !a.resume {
        return Err(usage(format!(
            "{} already exists; pass --resume to continue it or choose another --out",
            log_path.display()
        )));
    }
    let evaluator = build_evaluator(&a.evaluator, experiment.config.evaluator.clone())?;
    std::fs::create_dir_all(&a.out).map_err(runtime)?;

    let gateway = Gateway::new(backend, experiment.config.concurrency);
    let metadata = json!({
        "config": experiment.config,
        "llm_backend": gateway.backend().tag(),
        "evaluator_backend": evaluator.backend(),
        "decode_params": "backend defaults",
        "conditions": experiment.keys().len(),
        "example_conversations": experiment.split.examples.iter().map(|c| c.id()).collect::<Vec<_>>(),
        "eval_conversations": experiment.split.evals.iter().map(|c| c.id()).collect::<Vec<_>>(),
    });
    std::fs::write(
        a.out.join(METADATA_FILE),
        serde_json::to_string_pretty(&metadata).expect("metadata serializes"),
    )
    .map_err(runtime)?;

    let options = RunOptions {
        limit: a.limit,
        cancel: None,
    };
    let summary = run_to_log(&experiment, &gateway, &*evaluator, &log_path, a.resume, options).map_err(runtime)?;
    let records = read_records(&log_path).map_err(runtime)?;
    let errors = records.iter().filter(|r| !r.is_ok()).count();
    let (aggregates, empty) = aggregate_partial(&records);
    for e in &empty {
        writeln!(stderr, "warning: {e}").map_err(runtime)?;
    }
    std::fs::write(a.out.join(REPORT_FILE), emit_report(&aggregates)).map_err(runtime)?;
    writeln!(
        stdout,
        "records: {} of {} (this run: {} executed, {} skipped; errors: {})",
        records.len(),
        summary.total,
        summary.executed,
        summary.skipped,
        errors
    )
    .map_err(runtime)?;
    write!(stdout, "{}", summary_table(&aggregates)).map_err(runtime)?;
    if !records.is_empty() && errors == records.len() {
        return Err(runtime("every query failed"));
    }
    Ok(EXIT_OK)
}

fn report(a: ReportArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32, Failure> {
    let log = match (&a.log, &a.out) {
        (Some(log), _) => log.clone(),
        (None, Some(dir)) => dir.join(RESULTS_FILE),
        (None, None) => return Err(usage("--log or --out is required")),
    };
    if !log.exists() {
        return Err(usage(format!("{} does not exist", log.display())));
    }
    let records = read_records(&log).map_err(runtime)?;
    let (aggregates, empty) = aggregate_partial(&records);
    for e in &empty {
        writeln!(stderr, "warning: {e}").map_err(runtime)?;
    }
    if aggregates.is_empty() {
        return Err(runtime("no successful queries to report"));
    }
    let csv = emit_report(&aggregates);
    match &a.out {
        Some(dir) => std::fs::write(dir.join(REPORT_FILE), &csv).map_err(runtime)?,
        None => stdout.write_all(csv.as_bytes()).map_err(runtime)?,
    }
    Ok(EXIT_OK)
}

fn chat(a: ChatArgs, stdin: &mut dyn BufRead, stdout: &mut dyn Write) -> Result<i32, Failure> {
    let corpus = load_corpus_arg(a.corpus.as_deref())?;
    let templates = load_templates_arg(a.templates.as_deref())?;
    let examples =
        retcon_core::grid::select_conversations(corpus.conversations(), a.examples, a.seed).map_err(usage)?;
    let backend = build_backend(&a.backend, &templates)?;
    let evaluator = build_evaluator(&a.evaluator, EvaluatorConfig::default())?;
    let settings = ChatSettings {
        templates,
        examples,
        frequency: a.frequency.into(),
        goal: a.target,
        attempt_budget: 3,
    };
    let gateway = Gateway::new(backend, 1);
    run_chat(settings, &gateway, &*evaluator, stdin, stdout).map_err(runtime)?;
    Ok(EXIT_OK)
}
