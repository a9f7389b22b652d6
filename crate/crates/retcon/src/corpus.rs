//! The versioned JSON corpus format.
//!
//! ```json
//! {"version": 1, "conversations": [
//!   {"id": "campfire", "first_speaker": "STUDENT", "turns": ["...", "..."]}
//! ]}
//! ```
//!
//! Speakers are normally not stored per turn; turn `i` is spoken by
//! `first_speaker` when `i` is even and by the other party otherwise. A turn
//! may instead be written as `{"speaker": "STUDENT", "text": "..."}`, in
//! which case the explicit speaker is checked against that alternation.

use std::path::Path;

use retcon_core::{Conversation, ConversationError, Corpus, Speaker, Turn};
use serde::{Deserialize, Serialize};

pub const CORPUS_VERSION: u32 = 1;

/// The twenty-conversation corpus shipped with the crate.
pub const BUNDLED_CORPUS: &str = include_str!("../data/corpus.json");

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("malformed corpus document: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("unsupported corpus version {0} (expected {CORPUS_VERSION})")]
    Version(u32),
    #[error(transparent)]
    Invalid(#[from] ConversationError),
    #[error("cannot read corpus `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CorpusDoc {
    version: u32,
    conversations: Vec<ConversationDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConversationDoc {
    id: String,
    first_speaker: Speaker,
    turns: Vec<TurnDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum TurnDoc {
    Text(String),
    Labelled { speaker: Speaker, text: String },
}

pub fn load_corpus(document: &[u8]) -> Result<Corpus, CorpusError> {
    let doc: CorpusDoc = serde_json::from_slice(document)?;
    if doc.version != CORPUS_VERSION {
        return Err(CorpusError::Version(doc.version));
    }
    let conversations = doc
        .conversations
        .into_iter()
        .map(|c| {
            let mut expected = c.first_speaker;
            let mut turns = Vec::with_capacity(c.turns.len());
            for (index, t) in c.turns.into_iter().enumerate() {
                let (speaker, text) = match t {
                    TurnDoc::Text(text) => (expected, text),
                    TurnDoc::Labelled { speaker, text } => (speaker, text),
                };
                if speaker != expected {
                    return Err(ConversationError::NonAlternating {
                        id: c.id,
                        index,
                        expected,
                    });
                }
                turns.push(Turn::new(speaker, text).map_err(|e| locate(e, &c.id, index))?);
                expected = speaker.other();
            }
            Conversation::new(c.id, turns)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Corpus::new(conversations)?)
}

fn locate(err: ConversationError, id: &str, index: usize) -> ConversationError {
    match err {
        ConversationError::EmptyTurn { .. } => ConversationError::EmptyTurn {
            id: id.to_owned(),
            index,
        },
        ConversationError::MultilineTurn { .. } => ConversationError::MultilineTurn {
            id: id.to_owned(),
            index,
        },
        other => other,
    }
}

pub fn load_corpus_file(path: &Path) -> Result<Corpus, CorpusError> {
    let bytes = std::fs::read(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_corpus(&bytes)
}

pub fn bundled_corpus() -> Corpus {
    load_corpus(BUNDLED_CORPUS.as_bytes()).expect("bundled corpus is valid")
}

pub fn serialize_corpus(corpus: &Corpus) -> String {
    let doc = CorpusDoc {
        version: CORPUS_VERSION,
        conversations: corpus
            .conversations()
            .iter()
            .map(|c| ConversationDoc {
                id: c.id().to_owned(),
                first_speaker: c.first_speaker().unwrap_or(Speaker::Assistant),
                turns: c
                    .turns()
                    .iter()
                    .map(|t| TurnDoc::Text(t.text().to_owned()))
                    .collect(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("corpus serializes")
}
