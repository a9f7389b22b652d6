use alloc::string::String;

use crate::conversation::Speaker;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScoreError {
    #[error("difficulty score is not finite")]
    NonFinite,
    #[error("difficulty score {0} outside [1, 6]")]
    OutOfRange(f64),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConversationError {
    #[error("conversation `{id}` turn {index}: empty text")]
    EmptyTurn { id: String, index: usize },
    #[error("conversation `{id}` turn {index}: text contains a newline")]
    MultilineTurn { id: String, index: usize },
    #[error("conversation `{id}` turn {index}: expected {expected} to speak (speakers must alternate)")]
    NonAlternating {
        id: String,
        index: usize,
        expected: Speaker,
    },
    #[error("duplicate conversation id `{0}`")]
    DuplicateId(String),
    #[error("conversation id must not be empty")]
    EmptyId,
    #[error("cannot truncate conversation `{id}` to {length} turns (has {available})")]
    LengthOutOfRange {
        id: String,
        length: usize,
        available: usize,
    },
    #[error("corpus split needs an even number of conversations >= 2, got {0}")]
    SplitParity(usize),
}

/// Failure of an evaluation function. Remote failures carry the hex digest of
/// the offending text.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("cannot score empty text")]
    EmptyText,
    #[error("scorer timed out (text {text_hash})")]
    Timeout { text_hash: String },
    #[error("scorer connection failed (text {text_hash}): {message}")]
    Connection { text_hash: String, message: String },
    #[error("malformed scorer reply (text {text_hash}): {message}")]
    MalformedReply { text_hash: String, message: String },
    #[error("scorer returned out-of-range score {score} (text {text_hash})")]
    OutOfRange { text_hash: String, score: f64 },
    #[error("no score available (text {text_hash})")]
    Unavailable { text_hash: String },
    #[error("turn {index}: {source}")]
    AtTurn {
        index: usize,
        #[source]
        source: alloc::boxed::Box<EvalError>,
    },
}

impl EvalError {
    pub fn at_turn(self, index: usize) -> EvalError {
        EvalError::AtTurn {
            index,
            source: alloc::boxed::Box::new(self),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PromptError {
    #[error("the next turn after the prefix must be the assistant's (prefix ends with an assistant turn)")]
    ResponderMismatch,
    #[error("example {index} (`{id}`) must end with an assistant turn")]
    InvalidExample { index: usize, id: String },
    #[error("template `{field}` must contain `{slot}` exactly once")]
    TemplateSlot {
        field: &'static str,
        slot: &'static str,
    },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("no JSON record found in reply")]
    NoRecord,
    #[error("reply record is missing field `{0}`")]
    MissingField(&'static str),
    #[error("unknown difficulty level `{0}`")]
    UnknownLevel(String),
    #[error("reply text is empty")]
    EmptyText,
    #[error("prompt contains no instruction line")]
    NoInstruction,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GridError {
    #[error("grid has no techniques")]
    NoTechniques,
    #[error("grid dimension `{0}` is empty")]
    EmptyDimension(&'static str),
    #[error("repetitions must be >= 1")]
    ZeroRepetitions,
    #[error("example count {count} exceeds pool size {pool}")]
    ExampleCount { count: usize, pool: usize },
    #[error("prior turn count {prior} exceeds conversation `{id}` length {len}")]
    PriorTurns { prior: usize, id: String, len: usize },
}
