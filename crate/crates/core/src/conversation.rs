//! Conversations, turns and corpora.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::ConversationError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Speaker {
    Assistant,
    Student,
}

impl Speaker {
    pub const fn label(self) -> &'static str {
        match self {
            Speaker::Assistant => "ASSISTANT",
            Speaker::Student => "STUDENT",
        }
    }

    pub const fn other(self) -> Speaker {
        match self {
            Speaker::Assistant => Speaker::Student,
            Speaker::Student => Speaker::Assistant,
        }
    }
}

impl fmt::Display for Speaker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// One utterance: non-blank, single line.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Turn {
    speaker: Speaker,
    text: String,
}

impl Turn {
    pub fn new(speaker: Speaker, text: impl Into<String>) -> Result<Turn, ConversationError> {
        let text = text.into();
        check_text("", 0, &text)?;
        Ok(Turn { speaker, text })
    }

    pub fn speaker(&self) -> Speaker {
        self.speaker
    }

    pub fn text(&self) -> &str {
        &self.text
    }
}

fn check_text(id: &str, index: usize, text: &str) -> Result<(), ConversationError> {
    if text.trim().is_empty() {
        return Err(ConversationError::EmptyTurn {
            id: id.into(),
            index,
        });
    }
    if text.contains(['\n', '\r']) {
        return Err(ConversationError::MultilineTurn {
            id: id.into(),
            index,
        });
    }
    Ok(())
}

/// An ordered list of turns with strictly alternating speakers.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Conversation {
    id: String,
    turns: Vec<Turn>,
    truncated_from: Option<usize>,
}

impl Conversation {
    pub fn new(id: impl Into<String>, turns: Vec<Turn>) -> Result<Conversation, ConversationError> {
        let id = id.into();
        if id.is_empty() {
            return Err(ConversationError::EmptyId);
        }
        for (index, pair) in turns.windows(2).enumerate() {
            if pair[0].speaker == pair[1].speaker {
                return Err(ConversationError::NonAlternating {
                    id,
                    index: index + 1,
                    expected: pair[0].speaker.other(),
                });
            }
        }
        Ok(Conversation {
            id,
            turns,
            truncated_from: None,
        })
    }

    /// Builds a conversation whose speakers alternate starting from `first`.
    pub fn alternating<I, S>(
        id: impl Into<String>,
        first: Speaker,
        texts: I,
    ) -> Result<Conversation, ConversationError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let id = id.into();
        let mut speaker = first;
        let mut turns = Vec::new();
        for (index, text) in texts.into_iter().enumerate() {
            let text = text.into();
            check_text(&id, index, &text)?;
            turns.push(Turn { speaker, text });
            speaker = speaker.other();
        }
        Conversation::new(id, turns)
    }

    pub fn empty(id: impl Into<String>) -> Result<Conversation, ConversationError> {
        Conversation::new(id, Vec::new())
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn turns(&self) -> &[Turn] {
        &self.turns
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    pub fn first_speaker(&self) -> Option<Speaker> {
        self.turns.first().map(|t| t.speaker)
    }

    pub fn last(&self) -> Option<&Turn> {
        self.turns.last()
    }

    /// Original length when this is a truncated prefix.
    pub fn truncated_from(&self) -> Option<usize> {
        self.truncated_from
    }

    /// Who speaks next; an empty conversation is opened by the assistant.
    pub fn next_speaker(&self) -> Speaker {
        self.last()
            .map(|t| t.speaker.other())
            .unwrap_or(Speaker::Assistant)
    }

    /// Speaker of turn `index` (0-based) under alternation, if any turns exist.
    pub fn speaker_at(&self, index: usize) -> Option<Speaker> {
        self.turns.get(index).map(|t| t.speaker)
    }

    pub fn truncate(&self, length: usize) -> Result<Conversation, ConversationError> {
        if length > self.turns.len() {
            return Err(ConversationError::LengthOutOfRange {
                id: self.id.clone(),
                length,
                available: self.turns.len(),
            });
        }
        Ok(Conversation {
            id: self.id.clone(),
            turns: self.turns[..length].to_vec(),
            truncated_from: Some(self.truncated_from.unwrap_or(self.turns.len())),
        })
    }

    /// Swaps both speakers on every turn.
    pub fn swap_roles(&self) -> Conversation {
        Conversation {
            id: self.id.clone(),
            turns: self
                .turns
                .iter()
                .map(|t| Turn {
                    speaker: t.speaker.other(),
                    text: t.text.clone(),
                })
                .collect(),
            truncated_from: self.truncated_from,
        }
    }

    /// Prefix of `length` turns relabelled, if needed, so the assistant
    /// speaks next. In a two-party exchange the responder takes the
    /// ASSISTANT role.
    pub fn response_prefix(&self, length: usize) -> Result<Conversation, ConversationError> {
        let prefix = self.truncate(length)?;
        Ok(if prefix.next_speaker() == Speaker::Assistant {
            prefix
        } else {
            prefix.swap_roles()
        })
    }

    /// Prefix lengths whose final turn is an assistant turn.
    pub fn assistant_final_lengths(&self) -> impl Iterator<Item = usize> + '_ {
        self.turns
            .iter()
            .enumerate()
            .filter(|(_, t)| t.speaker == Speaker::Assistant)
            .map(|(i, _)| i + 1)
    }
}

/// Which half of the corpus a conversation belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitSide {
    Example,
    Eval,
}

/// Validated collection of conversations with unique ids.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    conversations: Vec<Conversation>,
}

impl Corpus {
    pub fn new(conversations: Vec<Conversation>) -> Result<Corpus, ConversationError> {
        let mut seen = BTreeMap::new();
        for c in &conversations {
            if seen.insert(c.id.as_str(), ()).is_some() {
                return Err(ConversationError::DuplicateId(c.id.clone()));
            }
        }
        Ok(Corpus { conversations })
    }

    pub fn conversations(&self) -> &[Conversation] {
        &self.conversations
    }

    pub fn len(&self) -> usize {
        self.conversations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conversations.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Conversation> {
        self.conversations.iter().find(|c| c.id == id)
    }

    /// Seeded half/half partition into example and eval pools.
    pub fn split(&self, seed: u64) -> Result<CorpusSplit, ConversationError> {
        split_corpus(self, seed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusSplit {
    pub examples: Vec<Conversation>,
    pub evals: Vec<Conversation>,
}

impl CorpusSplit {
    pub fn assignment(&self) -> BTreeMap<String, SplitSide> {
        self.examples
            .iter()
            .map(|c| (c.id.clone(), SplitSide::Example))
            .chain(self.evals.iter().map(|c| (c.id.clone(), SplitSide::Eval)))
            .collect()
    }
}

/// Conversations are ordered by id before shuffling, so the result does not
/// depend on file order. Each half comes back sorted by id.
pub fn split_corpus(corpus: &Corpus, seed: u64) -> Result<CorpusSplit, ConversationError> {
    let n = corpus.len();
    if n < 2 || n % 2 != 0 {
        return Err(ConversationError::SplitParity(n));
    }
    let mut order: Vec<&Conversation> = corpus.conversations.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (ex, ev) = order.split_at(n / 2);
    let collect = |half: &[&Conversation]| {
        let mut v: Vec<Conversation> = half.iter().map(|c| (*c).clone()).collect();
        v.sort_by(|a, b| a.id.cmp(&b.id));
        v
    };
    Ok(CorpusSplit {
        examples: collect(ex),
        evals: collect(ev),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::vec;

    fn conv(id: &str, n: usize) -> Conversation {
        Conversation::alternating(id, Speaker::Assistant, (0..n).map(|i| format!("turn {i}")))
            .unwrap()
    }

    #[test]
    fn rejects_non_alternating() {
        let turns = vec![
            Turn::new(Speaker::Assistant, "Hi.").unwrap(),
            Turn::new(Speaker::Student, "Hello.").unwrap(),
            Turn::new(Speaker::Student, "Again.").unwrap(),
        ];
        let err = Conversation::new("x", turns).unwrap_err();
        assert_eq!(
            err,
            ConversationError::NonAlternating {
                id: "x".into(),
                index: 2,
                expected: Speaker::Assistant
            }
        );
    }

    #[test]
    fn rejects_blank_and_multiline_turns() {
        assert!(matches!(
            Conversation::alternating("x", Speaker::Student, ["ok", "  "]),
            Err(ConversationError::EmptyTurn { index: 1, .. })
        ));
        assert!(matches!(
            Conversation::alternating("x", Speaker::Student, ["a\nb"]),
            Err(ConversationError::MultilineTurn { index: 0, .. })
        ));
    }

    #[test]
    fn truncate_bounds() {
        let c = conv("c", 20);
        assert!(c.truncate(0).unwrap().is_empty());
        assert_eq!(c.truncate(20).unwrap().turns(), c.turns());
        assert_eq!(c.truncate(20).unwrap().truncated_from(), Some(20));
        assert!(matches!(
            c.truncate(21),
            Err(ConversationError::LengthOutOfRange { length: 21, .. })
        ));
    }

    #[test]
    fn response_prefix_puts_assistant_next() {
        let c = conv("c", 20);
        for n in 0..=20 {
            let p = c.response_prefix(n).unwrap();
            assert_eq!(p.next_speaker(), Speaker::Assistant, "length {n}");
            assert_eq!(p.len(), n);
        }
    }

    #[test]
    fn assistant_final_lengths_follow_parity() {
        let c = conv("c", 6);
        assert_eq!(c.assistant_final_lengths().collect::<Vec<_>>(), vec![1, 3, 5]);
        let s = c.swap_roles();
        assert_eq!(s.assistant_final_lengths().collect::<Vec<_>>(), vec![2, 4, 6]);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err = Corpus::new(vec![conv("a", 1), conv("a", 2)]).unwrap_err();
        assert_eq!(err, ConversationError::DuplicateId("a".into()));
    }

    #[test]
    fn split_minimal_and_parity() {
        let corpus = Corpus::new(vec![conv("a", 1), conv("b", 1)]).unwrap();
        let s = corpus.split(3).unwrap();
        assert_eq!((s.examples.len(), s.evals.len()), (1, 1));
        let odd = Corpus::new(vec![conv("a", 1)]).unwrap();
        assert_eq!(odd.split(0), Err(ConversationError::SplitParity(1)));
        assert_eq!(
            Corpus::default().split(0),
            Err(ConversationError::SplitParity(0))
        );
    }

    #[test]
    fn split_twenty_is_deterministic() {
        let corpus =
            Corpus::new((0..20).map(|i| conv(&format!("c{i:02}"), 4)).collect()).unwrap();
        let a = corpus.split(7).unwrap();
        let b = corpus.split(7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.examples.len(), 10);
        assert_eq!(a.assignment().len(), 20);
    }
}
