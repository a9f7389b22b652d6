//! Grid execution: configuration, per-query records, the JSONL results log
//! and the worker pool.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;

use retcon_core::grid::{
    grid_cells, select_conversations, select_examples, select_truncations, truncation_pool_size, Cell,
    ExampleSource, SelectError,
};
use retcon_core::{
    build_few_shot, build_retcon, build_zero_shot, enumerate_conditions, squared_error, CefrLevel,
    ConditionKey, Corpus, CorpusSplit, DifficultyScore, Evaluator, GridError, GridSpec,
    InstructionFrequency, Prompt, PromptError, PromptTemplateSet, Technique,
};
use serde::{Deserialize, Serialize};

use crate::corpus::{bundled_corpus, load_corpus_file, CorpusError};
use crate::gateway::{Backend, CompletionRequest, FailureCause, Gateway};
use crate::scoring::EvaluatorConfig;
use crate::templates::{load_templates, TemplateError};
use crate::time::now_ms;

pub const RECORD_SCHEMA_VERSION: u32 = 1;

/// The experiment configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub techniques: Vec<Technique>,
    #[serde(default)]
    pub example_counts: Vec<usize>,
    pub prior_turn_counts: Vec<usize>,
    pub targets: Vec<CefrLevel>,
    #[serde(default = "one")]
    pub repetitions: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub frequency: InstructionFrequency,
    /// Extra few-shot cells drawing this many (conversation, length) cuts.
    #[serde(default)]
    pub few_shot_turn_example_counts: Vec<usize>,
    /// Relative paths resolve against the config file's directory; the
    /// bundled corpus is used when absent.
    #[serde(default)]
    pub corpus_path: Option<PathBuf>,
    #[serde(default)]
    pub split_seed: u64,
    #[serde(default)]
    pub templates_path: Option<PathBuf>,
    #[serde(default)]
    pub evaluator: EvaluatorConfig,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default = "default_attempts")]
    pub attempt_budget: u32,
}

fn one() -> usize {
    1
}

fn default_concurrency() -> usize {
    4
}

fn default_attempts() -> u32 {
    3
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("cannot read config `{path}`: {source}")]
    ConfigIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    ConfigFormat(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Templates(#[from] TemplateError),
    #[error(transparent)]
    Log(#[from] LogError),
}

impl GridConfig {
    pub fn from_json(document: &str) -> Result<GridConfig, HarnessError> {
        Ok(serde_json::from_str(document)?)
    }

    /// Reads a config file, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<GridConfig, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::ConfigIo {
            path: path.display().to_string(),
            source,
        })?;
        let mut config = GridConfig::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut config.corpus_path, &mut config.templates_path].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    pub fn load_corpus(&self) -> Result<Corpus, CorpusError> {
        match &self.corpus_path {
            Some(p) => load_corpus_file(p),
            None => Ok(bundled_corpus()),
        }
    }

    pub fn load_templates(&self) -> Result<PromptTemplateSet, TemplateError> {
        match &self.templates_path {
            Some(p) => load_templates(p),
            None => Ok(PromptTemplateSet::default()),
        }
    }
}

/// A validated grid bound to its corpus split and templates.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: GridConfig,
    pub templates: PromptTemplateSet,
    pub split: CorpusSplit,
    cells: HashMap<(Technique, usize), Cell>,
    keys: Vec<ConditionKey>,
}

impl Experiment {
    /// Loads corpus and templates named by the config and prepares the grid.
    pub fn from_config(config: GridConfig) -> Result<Experiment, HarnessError> {
        let corpus = config.load_corpus()?;
        let templates = config.load_templates()?;
        Experiment::prepare(config, &corpus, templates)
    }

    pub fn prepare(
        config: GridConfig,
        corpus: &Corpus,
        templates: PromptTemplateSet,
    ) -> Result<Experiment, HarnessError> {
        if config.concurrency == 0 {
            return Err(HarnessError::Config("concurrency must be >= 1".into()));
        }
        if config.attempt_budget == 0 {
            return Err(HarnessError::Config("attempt_budget must be >= 1".into()));
        }
        if config.techniques.iter().any(|&t| t != Technique::ZeroShot) && config.example_counts.is_empty() {
            return Err(GridError::EmptyDimension("example_counts").into());
        }
        config
            .evaluator
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        let split = corpus.split(config.split_seed).map_err(CorpusError::from)?;
        let cells = grid_cells(
            &config.techniques,
            &config.example_counts,
            &config.few_shot_turn_example_counts,
        );
        for cell in &cells {
            let pool = match cell.source {
                ExampleSource::Conversations => split.examples.len(),
                ExampleSource::Truncations => truncation_pool_size(&split.examples),
            };
            if cell.example_count > pool {
                return Err(GridError::ExampleCount {
                    count: cell.example_count,
                    pool,
                }
                .into());
            }
        }
        let spec = GridSpec {
            cells: cells.clone(),
            conversations: split.evals.iter().map(|c| (c.id().to_owned(), c.len())).collect(),
            prior_turn_counts: config.prior_turn_counts.clone(),
            targets: config.targets.clone(),
            repetitions: config.repetitions,
        };
        let keys = enumerate_conditions(&spec)?;
        Ok(Experiment {
            cells: cells.into_iter().map(|c| ((c.technique, c.example_count), c)).collect(),
            config,
            templates,
            split,
            keys,
        })
    }

    /// Every condition in enumeration order.
    pub fn keys(&self) -> &[ConditionKey] {
        &self.keys
    }

    /// The prompt for one condition.
    pub fn build_prompt<E: Evaluator + ?Sized>(
        &self,
        key: &ConditionKey,
        evaluator: &E,
    ) -> Result<Prompt, SelectError> {
        let conversation = self
            .split
            .evals
            .iter()
            .find(|c| c.id() == key.conversation_id)
            .ok_or_else(|| GridError::EmptyDimension("conversations"))?;
        let prefix = conversation.response_prefix(key.prior_turns).map_err(|_| GridError::PriorTurns {
            prior: key.prior_turns,
            id: key.conversation_id.clone(),
            len: conversation.len(),
        })?;
        let pool = &self.split.examples;
        let seed = key.selection_seed(self.config.seed);
        let t = &self.templates;
        Ok(match key.technique {
            Technique::ZeroShot => build_zero_shot(t, &prefix, key.target)?,
            Technique::FewShot => {
                let source = self
                    .cells
                    .get(&(key.technique, key.example_count))
                    .map_or(ExampleSource::Conversations, |c| c.source);
                let examples = match source {
                    ExampleSource::Conversations => select_examples(pool, key.example_count, seed, evaluator)?,
                    ExampleSource::Truncations => select_truncations(pool, key.example_count, seed, evaluator)?,
                };
                build_few_shot(t, &examples, &prefix, key.target)?
            }
            Technique::Retcon => {
                let examples = select_conversations(pool, key.example_count, seed)?;
                build_retcon(t, &examples, &prefix, key.target, evaluator, self.config.frequency)?
            }
        })
    }

    /// Builds, generates and measures one condition. Failures become error rows.
    pub fn run_query<B: Backend, E: Evaluator + ?Sized>(
        &self,
        key: &ConditionKey,
        gateway: &Gateway<B>,
        evaluator: &E,
    ) -> QueryRecord {
        let started_ms = now_ms();
        let mut record = QueryRecord {
            schema_version: RECORD_SCHEMA_VERSION,
            key: key.clone(),
            prompt_chars: 0,
            instruction_blocks: 0,
            attempts: 0,
            llm_backend: gateway.backend().tag(),
            evaluator_backend: evaluator.backend().to_owned(),
            started_ms,
            finished_ms: started_ms,
            outcome: Outcome::Error {
                kind: ErrorKind::Prompt,
                message: String::new(),
            },
        };
        record.outcome = match self.build_prompt(key, evaluator) {
            Err(e) => Outcome::error(select_error_kind(&e), e),
            Ok(prompt) => {
                record.prompt_chars = prompt.char_length;
                record.instruction_blocks = prompt.instruction_block_count;
                let request = CompletionRequest::new(prompt).with_attempts(self.config.attempt_budget);
                match gateway.generate(&request) {
                    Err(e) => {
                        record.attempts = self.config.attempt_budget;
                        let kind = match e.cause() {
                            Some(FailureCause::Parse(_)) => ErrorKind::Parse,
                            _ => ErrorKind::Transport,
                        };
                        Outcome::error(kind, e)
                    }
                    Ok(g) => {
                        record.attempts = g.attempts;
                        match evaluator.score(&g.parsed.text) {
                            Err(e) => Outcome::error(ErrorKind::Evaluator, e),
                            Ok(measured) => Outcome::Ok {
                                declared_level: g.parsed.declared_level,
                                squared_error: squared_error(key.target, measured),
                                measured,
                                raw: g.raw,
                            },
                        }
                    }
                }
            }
        };
        record.finished_ms = now_ms();
        record
    }
}

fn select_error_kind(e: &SelectError) -> ErrorKind {
    match e {
        SelectError::Prompt(PromptError::Eval(_)) => ErrorKind::Evaluator,
        _ => ErrorKind::Prompt,
    }
}

/// Failure taxonomy for error rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorKind {
    Transport,
    Parse,
    Evaluator,
    Prompt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum Outcome {
    Ok {
        raw: String,
        declared_level: CefrLevel,
        measured: DifficultyScore,
        squared_error: f64,
    },
    Error {
        kind: ErrorKind,
        message: String,
    },
}

impl Outcome {
    fn error(kind: ErrorKind, e: impl std::fmt::Display) -> Outcome {
        Outcome::Error {
            kind,
            message: e.to_string(),
        }
    }
}

/// One line of the results log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub schema_version: u32,
    #[serde(flatten)]
    pub key: ConditionKey,
    pub prompt_chars: usize,
    pub instruction_blocks: usize,
    pub attempts: u32,
    pub llm_backend: String,
    pub evaluator_backend: String,
    pub started_ms: u64,
    pub finished_ms: u64,
    pub outcome: Outcome,
}

impl QueryRecord {
    pub fn is_ok(&self) -> bool {
        matches!(self.outcome, Outcome::Ok { .. })
    }

    pub fn squared_error(&self) -> Option<f64> {
        match self.outcome {
            Outcome::Ok { squared_error, .. } => Some(squared_error),
            Outcome::Error { .. } => None,
        }
    }

    /// Copy with both timestamps zeroed, for comparing runs.
    pub fn without_timestamps(&self) -> QueryRecord {
        QueryRecord {
            started_ms: 0,
            finished_ms: 0,
            ..self.clone()
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("results log `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("results log `{path}` already exists")]
    Exists { path: String },
    #[error("results log `{path}` line {line}: {message}")]
    Corrupt { path: String, line: usize, message: String },
}

/// Append-only JSONL log. One writer; each record is written as a single
/// line and flushed before the next.
#[derive(Debug)]
pub struct ResultsLog {
    path: PathBuf,
    file: File,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> LogError + '_ {
    move |source| LogError::Io {
        path: path.display().to_string(),
        source,
    }
}

impl ResultsLog {
    /// Starts a new log; fails if the file exists.
    pub fn create(path: &Path) -> Result<ResultsLog, LogError> {
        let file = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(path)
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::AlreadyExists => LogError::Exists {
                    path: path.display().to_string(),
                },
                _ => io_err(path)(e),
            })?;
        Ok(ResultsLog {
            path: path.to_owned(),
            file,
        })
    }

    /// Reopens an existing log (or starts one) for appending. A torn final
    /// line left by an interrupted write is cut off; earlier lines must parse.
    pub fn resume(path: &Path) -> Result<(ResultsLog, Vec<QueryRecord>), LogError> {
        if !path.exists() {
            return Ok((ResultsLog::create(path)?, Vec::new()));
        }
        let (records, good_len) = read_log(path)?;
        let torn = OpenOptions::new().write(true).open(path).map_err(io_err(path))?;
        torn.set_len(good_len).map_err(io_err(path))?;
        drop(torn);
        let file = OpenOptions::new().append(true).open(path).map_err(io_err(path))?;
        let log = ResultsLog {
            path: path.to_owned(),
            file,
        };
        Ok((log, records))
    }

    pub fn append(&mut self, record: &QueryRecord) -> Result<(), LogError> {
        let mut line = serde_json::to_string(record).expect("record serializes");
        line.push('\n');
        self.file.write_all(line.as_bytes()).map_err(io_err(&self.path))?;
        self.file.flush().map_err(io_err(&self.path))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// Records of a log, ignoring a torn final line.
pub fn read_records(path: &Path) -> Result<Vec<QueryRecord>, LogError> {
    read_log(path).map(|(r, _)| r)
}

fn read_log(path: &Path) -> Result<(Vec<QueryRecord>, u64), LogError> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(io_err(path))?;
    let good_len = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    let mut records = Vec::new();
    for (i, line) in bytes[..good_len].split(|&b| b == b'\n').enumerate() {
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let corrupt = |message: String| LogError::Corrupt {
            path: path.display().to_string(),
            line: i + 1,
            message,
        };
        let rec: QueryRecord = serde_json::from_slice(line).map_err(|e| corrupt(e.to_string()))?;
        if rec.schema_version != RECORD_SCHEMA_VERSION {
            return Err(corrupt(format!("unsupported schema version {}", rec.schema_version)));
        }
        records.push(rec);
    }
    Ok((records, good_len as u64))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions<'a> {
    /// Execute at most this many pending conditions.
    pub limit: Option<usize>,
    /// Stop taking new conditions once set.
    pub cancel: Option<&'a AtomicBool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunSummary {
    pub total: usize,
    pub skipped: usize,
    pub executed: usize,
    pub errors: usize,
}

/// Runs every condition whose key is not in `done`, appending records to
/// `log` in enumeration order.
pub fn run_grid<B, E>(
    experiment: &Experiment,
    gateway: &Gateway<B>,
    evaluator: &E,
    log: &mut ResultsLog,
    done: &HashSet<ConditionKey>,
    options: RunOptions<'_>,
) -> Result<RunSummary, LogError>
where
    B: Backend,
    E: Evaluator + Sync + ?Sized,
{
    let keys = experiment.keys();
    let mut pending: Vec<&ConditionKey> = keys.iter().filter(|k| !done.contains(*k)).collect();
    let skipped = keys.len() - pending.len();
    if let Some(limit) = options.limit {
        pending.truncate(limit);
    }
    let workers = experiment.config.concurrency.min(pending.len()).max(1);
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::sync_channel::<(usize, QueryRecord)>(workers * 4);
    let mut summary = RunSummary {
        total: keys.len(),
        skipped,
        ..Default::default()
    };

    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, pending) = (&next, &pending);
            scope.spawn(move || loop {
                if options.cancel.is_some_and(|c| c.load(Ordering::SeqCst)) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(key) = pending.get(i) else { break };
                let record = experiment.run_query(key, gateway, evaluator);
                if tx.send((i, record)).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        // single writer; a small reorder buffer keeps the log in key order
        let mut buffer = BTreeMap::new();
        let mut expected = 0usize;
        let mut write = |record: QueryRecord, summary: &mut RunSummary| -> Result<(), LogError> {
            summary.executed += 1;
            if !record.is_ok() {
                summary.errors += 1;
            }
            log.append(&record)
        };
        let mut result = Ok(());
        for (i, record) in rx.iter() {
            buffer.insert(i, record);
            while let Some(record) = buffer.remove(&expected) {
                expected += 1;
                if result.is_ok() {
                    result = write(record, &mut summary);
                }
            }
        }
        for (_, record) in std::mem::take(&mut buffer) {
            if result.is_ok() {
                result = write(record, &mut summary);
            }
        }
        result
    })?;
    Ok(summary)
}

/// Opens (or resumes) the log at `path` and runs the remaining conditions.
pub fn run_to_log<B, E>(
    experiment: &Experiment,
    gateway: &Gateway<B>,
    evaluator: &E,
    path: &Path,
    resume: bool,
    options: RunOptions<'_>,
) -> Result<RunSummary, LogError>
where
    B: Backend,
    E: Evaluator + Sync + ?Sized,
{
    let (mut log, existing) = if resume {
        ResultsLog::resume(path)?
    } else {
        (ResultsLog::create(path)?, Vec::new())
    };
    let done: HashSet<ConditionKey> = existing.into_iter().map(|r| r.key).collect();
    run_grid(experiment, gateway, evaluator, &mut log, &done, options)
}
