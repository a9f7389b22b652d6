//! Evaluator backends: the built-in heuristic, a client for a remote scoring
//! service, and a digest-keyed cache in front of either.
//!
//! Remote wire protocol (JSON bodies):
//!
//! | request                                   | reply                                |
//! |-------------------------------------------|--------------------------------------|
//! | `POST /score {"text": t}`                 | `{"score": s}`                       |
//! | `POST /score_batch {"texts": [t, ...]}`   | `{"scores": [s, ...]}` (same order)  |
//! | `GET /healthz`                            | `{"status": "ok", "backend": tag}`   |
//!
//! A `null` entry in a batch reply marks a per-element failure.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use retcon_core::{text_digest, DifficultyScore, EvalError, Evaluator, HeuristicScorer};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use url::Url;

use crate::http::{self, HttpFailure};
use crate::sync::Semaphore;

pub type SharedEvaluator = Arc<dyn Evaluator + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvaluatorBackend {
    #[default]
    Heuristic,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluatorConfig {
    pub backend: EvaluatorBackend,
    pub remote_endpoint: Option<String>,
    pub timeout_ms: u64,
    pub cache_enabled: bool,
    /// JSONL file the cache is loaded from and appended to.
    pub cache_path: Option<PathBuf>,
    pub max_in_flight: usize,
}

impl Default for EvaluatorConfig {
    fn default() -> Self {
        EvaluatorConfig {
            backend: EvaluatorBackend::Heuristic,
            remote_endpoint: None,
            timeout_ms: 10_000,
            cache_enabled: true,
            cache_path: None,
            max_in_flight: 8,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScoringConfigError {
    #[error("remote evaluator needs `remote_endpoint`")]
    MissingEndpoint,
    #[error("invalid evaluator endpoint `{endpoint}`: {reason}")]
    BadEndpoint { endpoint: String, reason: String },
    #[error("evaluator timeout must be > 0 ms")]
    ZeroTimeout,
    #[error("cannot open score cache `{path}`: {source}")]
    Cache {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl EvaluatorConfig {
    pub fn validate(&self) -> Result<(), ScoringConfigError> {
        if self.timeout_ms == 0 {
            return Err(ScoringConfigError::ZeroTimeout);
        }
        if self.backend == EvaluatorBackend::Remote {
            let endpoint = self
                .remote_endpoint
                .as_deref()
                .ok_or(ScoringConfigError::MissingEndpoint)?;
            parse_endpoint(endpoint)?;
        }
        Ok(())
    }

    pub fn build(&self) -> Result<SharedEvaluator, ScoringConfigError> {
        self.validate()?;
        let inner: SharedEvaluator = match self.backend {
            EvaluatorBackend::Heuristic => Arc::new(HeuristicScorer),
            EvaluatorBackend::Remote => Arc::new(RemoteEvaluator::new(
                self.remote_endpoint.as_deref().unwrap_or_default(),
                self.timeout_ms,
                self.max_in_flight,
            )?),
        };
        if !self.cache_enabled {
            return Ok(inner);
        }
        let cache = match &self.cache_path {
            Some(path) => CachedEvaluator::persistent(inner, path).map_err(|source| {
                ScoringConfigError::Cache {
                    path: path.display().to_string(),
                    source,
                }
            })?,
            None => CachedEvaluator::new(inner),
        };
        Ok(Arc::new(cache))
    }
}

fn parse_endpoint(endpoint: &str) -> Result<Url, ScoringConfigError> {
    let bad = |reason: String| ScoringConfigError::BadEndpoint {
        endpoint: endpoint.to_owned(),
        reason,
    };
    let mut url = Url::parse(endpoint).map_err(|e| bad(e.to_string()))?;
    if !matches!(url.scheme(), "http" | "https") || url.host().is_none() {
        return Err(bad("expected an http(s) URL with a host".into()));
    }
    if !url.path().ends_with('/') {
        let path = format!("{}/", url.path());
        url.set_path(&path);
    }
    Ok(url)
}

/// Client for a scoring service speaking the protocol above.
#[derive(Debug)]
pub struct RemoteEvaluator {
    base: Url,
    agent: ureq::Agent,
    in_flight: Semaphore,
    tag: String,
}

fn transport_error(failure: HttpFailure, text_hash: String) -> EvalError {
    match failure {
        HttpFailure::Timeout => EvalError::Timeout { text_hash },
        HttpFailure::Connection(message) => EvalError::Connection { text_hash, message },
        HttpFailure::Status(503, _) => EvalError::Unavailable { text_hash },
        HttpFailure::Status(code, body) => EvalError::MalformedReply {
            text_hash,
            message: format!("HTTP {code}: {}", body.chars().take(200).collect::<String>()),
        },
        HttpFailure::Body(message) => EvalError::MalformedReply { text_hash, message },
    }
}

fn checked_score(value: &Value, text_hash: String) -> Result<DifficultyScore, EvalError> {
    let score = value.as_f64().ok_or_else(|| EvalError::MalformedReply {
        text_hash: text_hash.clone(),
        message: format!("score is not a number: {value}"),
    })?;
    DifficultyScore::new(score).map_err(|_| EvalError::OutOfRange { text_hash, score })
}

impl RemoteEvaluator {
    pub fn new(endpoint: &str, timeout_ms: u64, max_in_flight: usize) -> Result<Self, ScoringConfigError> {
        if timeout_ms == 0 {
            return Err(ScoringConfigError::ZeroTimeout);
        }
        let base = parse_endpoint(endpoint)?;
        Ok(RemoteEvaluator {
            tag: format!("remote:{}", base.as_str().trim_end_matches('/')),
            base,
            agent: http::agent(timeout_ms),
            in_flight: Semaphore::new(max_in_flight),
        })
    }

    fn url(&self, path: &str) -> String {
        self.base.join(path).expect("relative path joins").to_string()
    }

    /// Scores several texts in one request. The outer error is a failure of
    /// the whole request and carries the digest of the first text.
    pub fn score_batch(
        &self,
        texts: &[&str],
    ) -> Result<Vec<Result<DifficultyScore, EvalError>>, EvalError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        if texts.iter().any(|t| t.trim().is_empty()) {
            return Err(EvalError::EmptyText);
        }
        let batch_hash = text_digest(texts[0]);
        let reply = {
            let _permit = self.in_flight.acquire();
            http::post_json(&self.agent, &self.url("score_batch"), &[], &json!({ "texts": texts }))
        }
        .map_err(|f| transport_error(f, batch_hash.clone()))?;
        let scores = reply
            .get("scores")
            .and_then(Value::as_array)
            .ok_or_else(|| EvalError::MalformedReply {
                text_hash: batch_hash.clone(),
                message: "reply has no `scores` array".into(),
            })?;
        if scores.len() != texts.len() {
            return Err(EvalError::MalformedReply {
                text_hash: batch_hash,
                message: format!("expected {} scores, got {}", texts.len(), scores.len()),
            });
        }
        Ok(texts
            .iter()
            .zip(scores)
            .map(|(text, value)| {
                let hash = text_digest(text);
                if value.is_null() {
                    Err(EvalError::Unavailable { text_hash: hash })
                } else {
                    checked_score(value, hash)
                }
            })
            .collect())
    }

    /// The backend tag reported by the service.
    pub fn health(&self) -> Result<String, EvalError> {
        let reply = http::get_json(&self.agent, &self.url("healthz"))
            .map_err(|f| transport_error(f, String::new()))?;
        match (reply.get("status").and_then(Value::as_str), reply.get("backend").and_then(Value::as_str)) {
            (Some("ok"), Some(tag)) => Ok(tag.to_owned()),
            _ => Err(EvalError::MalformedReply {
                text_hash: String::new(),
                message: format!("unexpected health reply: {reply}"),
            }),
        }
    }
}

impl Evaluator for RemoteEvaluator {
    fn score(&self, text: &str) -> Result<DifficultyScore, EvalError> {
        if text.trim().is_empty() {
            return Err(EvalError::EmptyText);
        }
        let text_hash = text_digest(text);
        let reply = {
            let _permit = self.in_flight.acquire();
            http::post_json(&self.agent, &self.url("score"), &[], &json!({ "text": text }))
        }
        .map_err(|f| transport_error(f, text_hash.clone()))?;
        let value = reply.get("score").ok_or_else(|| EvalError::MalformedReply {
            text_hash: text_hash.clone(),
            message: "reply has no `score` field".into(),
        })?;
        checked_score(value, text_hash)
    }

    fn backend(&self) -> &str {
        &self.tag
    }
}

/// One cache entry, and one line of a persisted cache file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub text_hash: String,
    pub score: DifficultyScore,
    pub backend: String,
}

/// Memoizes successful scores by text digest. Failures are never cached.
pub struct CachedEvaluator<E> {
    inner: E,
    entries: Mutex<HashMap<String, DifficultyScore>>,
    sink: Option<Mutex<BufWriter<File>>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl<E: Evaluator> CachedEvaluator<E> {
    pub fn new(inner: E) -> Self {
        CachedEvaluator {
            inner,
            entries: Mutex::new(HashMap::new()),
            sink: None,
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    /// Loads entries for this backend from `path` (if it exists) and appends
    /// new ones to it. Unreadable lines are skipped.
    pub fn persistent(inner: E, path: &Path) -> std::io::Result<Self> {
        let mut entries = HashMap::new();
        if path.exists() {
            for line in BufReader::new(File::open(path)?).lines() {
                let line = line?;
                if let Ok(rec) = serde_json::from_str::<ScoreRecord>(&line) {
                    if rec.backend == inner.backend() {
                        entries.insert(rec.text_hash, rec.score);
                    }
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let mut cache = CachedEvaluator::new(inner);
        cache.entries = Mutex::new(entries);
        cache.sink = Some(Mutex::new(BufWriter::new(file)));
        Ok(cache)
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// (hits, misses) so far.
    pub fn stats(&self) -> (u64, u64) {
        (self.hits.load(Ordering::Relaxed), self.misses.load(Ordering::Relaxed))
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }
}

impl<E: Evaluator> Evaluator for CachedEvaluator<E> {
    fn score(&self, text: &str) -> Result<DifficultyScore, EvalError> {
        let key = text_digest(text);
        if let Some(&s) = self.entries.lock().unwrap_or_else(|e| e.into_inner()).get(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(s);
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let score = self.inner.score(text)?;
        let fresh = self
            .entries
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(key.clone(), score)
            .is_none();
        if let (true, Some(sink)) = (fresh, &self.sink) {
            let rec = ScoreRecord {
                text_hash: key,
                score,
                backend: self.inner.backend().to_owned(),
            };
            let mut w = sink.lock().unwrap_or_else(|e| e.into_inner());
            // a failed cache write only costs a re-score later
            let _ = writeln!(w, "{}", serde_json::to_string(&rec).expect("record serializes"))
                .and_then(|_| w.flush());
        }
        Ok(score)
    }

    fn backend(&self) -> &str {
        self.inner.backend()
    }
}
