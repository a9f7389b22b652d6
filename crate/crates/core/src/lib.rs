//! Turn-level control of conversational LLM replies.
//!
//! This crate is `no_std` (it needs `alloc`). It holds the pure parts of the
//! toolkit: the CEFR goal scale, the conversation model, prompt builders for
//! zero-shot, few-shot and Retcon prompting, the built-in difficulty
//! heuristic, reply parsing, grid enumeration and summary statistics. IO,
//! HTTP backends and the experiment runner live in the `retcon` crate.
//!
//! ```
//! use retcon_core::{build_retcon, CefrLevel, Conversation, HeuristicScorer,
//!     InstructionFrequency, PromptTemplateSet, Speaker};
//!
//! let history = Conversation::alternating("demo", Speaker::Student, ["Hello!"]).unwrap();
//! let prompt = build_retcon(
//!     &PromptTemplateSet::default(),
//!     &[],
//!     &history,
//!     CefrLevel::B1,
//!     &HeuristicScorer,
//!     InstructionFrequency::AssistantTurnsOnly,
//! )
//! .unwrap();
//! assert!(prompt.text.ends_with("exactly B1 on the CEFR scale.)"));
//! ```

#![no_std]

extern crate alloc;

pub mod cefr;
pub mod conversation;
pub mod error;
pub mod evaluator;
pub mod grid;
pub mod prompt;
pub mod response;
pub mod stats;

pub use cefr::{level_to_scalar, scalar_to_level, squared_error, CefrLevel, DifficultyScore};
pub use conversation::{split_corpus, Conversation, Corpus, CorpusSplit, Speaker, SplitSide, Turn};
pub use error::{ConversationError, EvalError, GridError, ParseError, PromptError, ScoreError};
pub use evaluator::{heuristic_score, text_digest, Evaluator, HeuristicScorer};
pub use grid::{enumerate_conditions, ConditionKey, GridSpec};
pub use prompt::{
    annotate_for_retcon, build_few_shot, build_retcon, build_zero_shot, expected_example_count,
    render_instruction, render_response_block, AnnotatedExample, AnnotatedTurn, ExampleShape,
    InstructionFrequency, InstructionPosition, Prompt, PromptTemplateSet, Technique,
};
pub use response::{extract_target_level, parse_response, ParsedResponse};
