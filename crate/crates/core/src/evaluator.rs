//! Evaluation functions: text in, continuous CEFR difficulty out.
//!
//! The same evaluator annotates example turns, rewrites history for Retcon
//! and measures generated replies, so all three agree on what a level means.

use alloc::string::String;

use sha2::{Digest, Sha256};

use crate::cefr::{scalar_to_level, CefrLevel, DifficultyScore};
use crate::error::EvalError;

pub trait Evaluator {
    fn score(&self, text: &str) -> Result<DifficultyScore, EvalError>;

    /// Short tag recorded alongside every score.
    fn backend(&self) -> &str;

    /// Quantized level of `text`; the only path by which example turns get goals.
    fn annotate_goal(&self, text: &str) -> Result<CefrLevel, EvalError> {
        let s = self.score(text)?;
        Ok(scalar_to_level(s.value()).expect("scores are finite"))
    }
}

impl<E: Evaluator + ?Sized> Evaluator for &E {
    fn score(&self, text: &str) -> Result<DifficultyScore, EvalError> {
        (**self).score(text)
    }

    fn backend(&self) -> &str {
        (**self).backend()
    }
}

impl<E: Evaluator + ?Sized> Evaluator for alloc::boxed::Box<E> {
    fn score(&self, text: &str) -> Result<DifficultyScore, EvalError> {
        (**self).score(text)
    }

    fn backend(&self) -> &str {
        (**self).backend()
    }
}

impl<E: Evaluator + ?Sized> Evaluator for alloc::sync::Arc<E> {
    fn score(&self, text: &str) -> Result<DifficultyScore, EvalError> {
        (**self).score(text)
    }

    fn backend(&self) -> &str {
        (**self).backend()
    }
}

/// Lowercase hex SHA-256 of the text; used as cache key and error tag.
pub fn text_digest(text: &str) -> String {
    use core::fmt::Write;
    let digest = Sha256::digest(text.as_bytes());
    let mut out = String::with_capacity(64);
    for b in digest.iter() {
        let _ = write!(out, "{b:02x}");
    }
    out
}

/// Sentence/word length statistics behind the heuristic score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TextStats {
    pub sentences: usize,
    pub tokens: usize,
    pub token_chars: usize,
}

impl TextStats {
    pub fn of(text: &str) -> TextStats {
        let mut stats = TextStats {
            sentences: 0,
            tokens: 0,
            token_chars: 0,
        };
        for sentence in text.split(['.', '!', '?']) {
            let mut in_sentence = 0;
            for raw in sentence.split_whitespace() {
                let token = raw.trim_matches(|c: char| !c.is_alphanumeric());
                if token.is_empty() {
                    continue;
                }
                in_sentence += 1;
                stats.token_chars += token.chars().count();
            }
            if in_sentence > 0 {
                stats.sentences += 1;
                stats.tokens += in_sentence;
            }
        }
        stats
    }

    /// Mean tokens per sentence.
    pub fn mean_sentence_len(&self) -> f64 {
        if self.sentences == 0 {
            0.0
        } else {
            self.tokens as f64 / self.sentences as f64
        }
    }

    /// Mean characters per token.
    pub fn mean_token_len(&self) -> f64 {
        if self.tokens == 0 {
            0.0
        } else {
            self.token_chars as f64 / self.tokens as f64
        }
    }
}

/// `clamp(0.25 * mean sentence length + 0.5 * mean word length, 1, 6)`.
pub fn heuristic_score(text: &str) -> Result<DifficultyScore, EvalError> {
    if text.trim().is_empty() {
        return Err(EvalError::EmptyText);
    }
    let stats = TextStats::of(text);
    let raw = 0.25 * stats.mean_sentence_len() + 0.5 * stats.mean_token_len();
    Ok(DifficultyScore::clamped(raw).expect("finite"))
}

/// Deterministic built-in scorer; a pure function of the text bytes.
#[derive(Debug, Clone, Copy, Default)]
pub struct HeuristicScorer;

impl Evaluator for HeuristicScorer {
    fn score(&self, text: &str) -> Result<DifficultyScore, EvalError> {
        heuristic_score(text)
    }

    fn backend(&self) -> &str {
        "heuristic"
    }
}
