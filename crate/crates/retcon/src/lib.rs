//! File formats, scoring and LLM backends, the experiment runner and the
//! command-line front end built on `retcon-core`.

pub mod chat;
pub mod cli;
pub mod corpus;
pub mod gateway;
pub mod harness;
pub mod report;
pub mod scoring;
pub mod templates;
mod http;
mod sync;
mod time;

pub use corpus::{bundled_corpus, load_corpus, load_corpus_file, CorpusError};
pub use gateway::{Backend, CompletionRequest, GenerateError, Gateway, Generation};
pub use harness::{GridConfig, QueryRecord, ResultsLog};
pub use report::{aggregate, emit_report, ConditionAggregate};
pub use scoring::{CachedEvaluator, EvaluatorConfig, RemoteEvaluator};
