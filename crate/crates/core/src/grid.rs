//! The experiment grid: condition keys, per-condition seeds and example
//! selection.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cefr::CefrLevel;
use crate::conversation::Conversation;
use crate::error::{GridError, PromptError};
use crate::evaluator::Evaluator;
use crate::prompt::{AnnotatedExample, Technique};

/// How a cell draws its few-shot examples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExampleSource {
    /// `count` distinct conversations, each cut at one random length.
    Conversations,
    /// `count` distinct (conversation, length) cuts; may reuse conversations.
    Truncations,
}

/// One (technique, example count) column of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Cell {
    pub technique: Technique,
    pub example_count: usize,
    pub source: ExampleSource,
}

/// Cells for the requested techniques. Zero-shot contributes a single cell at
/// 0 examples; few-shot additionally gets one `Truncations` cell per entry of
/// `turn_example_counts`. Duplicate (technique, count) pairs keep the first.
pub fn grid_cells(
    techniques: &[Technique],
    example_counts: &[usize],
    turn_example_counts: &[usize],
) -> Vec<Cell> {
    let mut cells: Vec<Cell> = Vec::new();
    let mut push = |cell: Cell| {
        if !cells
            .iter()
            .any(|c| c.technique == cell.technique && c.example_count == cell.example_count)
        {
            cells.push(cell);
        }
    };
    for &technique in techniques {
        let counts: &[usize] = if technique == Technique::ZeroShot {
            &[0]
        } else {
            example_counts
        };
        for &example_count in counts {
            push(Cell {
                technique,
                example_count,
                source: ExampleSource::Conversations,
            });
        }
        if technique == Technique::FewShot {
            for &example_count in turn_example_counts {
                push(Cell {
                    technique,
                    example_count,
                    source: ExampleSource::Truncations,
                });
            }
        }
    }
    cells
}

/// Identity of one query.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ConditionKey {
    pub technique: Technique,
    pub example_count: usize,
    pub conversation_id: String,
    pub prior_turns: usize,
    pub target: CefrLevel,
    pub repetition: usize,
}

fn seed_from_parts(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let digest = h.finalize();
    let mut first = [0u8; 8];
    first.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(first)
}

impl ConditionKey {
    /// Seed for everything specific to this exact query.
    pub fn seed(&self, master: u64) -> u64 {
        seed_from_parts(&[
            &master.to_le_bytes(),
            self.technique.as_str().as_bytes(),
            &self.selection_parts(),
        ])
    }

    /// Seed for example selection. Technique is left out so few-shot and
    /// Retcon see the same example conversations in the same cell.
    pub fn selection_seed(&self, master: u64) -> u64 {
        seed_from_parts(&[&master.to_le_bytes(), &self.selection_parts()])
    }

    fn selection_parts(&self) -> Vec<u8> {
        let mut v = Vec::new();
        v.extend_from_slice(&(self.example_count as u64).to_le_bytes());
        v.extend_from_slice(&(self.conversation_id.len() as u64).to_le_bytes());
        v.extend_from_slice(self.conversation_id.as_bytes());
        v.extend_from_slice(&(self.prior_turns as u64).to_le_bytes());
        v.push(self.target.scalar());
        v.extend_from_slice(&(self.repetition as u64).to_le_bytes());
        v
    }
}

/// Everything needed to enumerate the grid.
#[derive(Debug, Clone)]
pub struct GridSpec {
    pub cells: Vec<Cell>,
    /// (id, turn count) of each eval conversation.
    pub conversations: Vec<(String, usize)>,
    pub prior_turn_counts: Vec<usize>,
    pub targets: Vec<CefrLevel>,
    pub repetitions: usize,
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), GridError> {
        if self.cells.is_empty() {
            return Err(GridError::NoTechniques);
        }
        if self.conversations.is_empty() {
            return Err(GridError::EmptyDimension("conversations"));
        }
        if self.prior_turn_counts.is_empty() {
            return Err(GridError::EmptyDimension("prior_turn_counts"));
        }
        if self.targets.is_empty() {
            return Err(GridError::EmptyDimension("targets"));
        }
        if self.repetitions == 0 {
            return Err(GridError::ZeroRepetitions);
        }
        for (id, len) in &self.conversations {
            if let Some(&prior) = self.prior_turn_counts.iter().find(|&&p| p > *len) {
                return Err(GridError::PriorTurns {
                    prior,
                    id: id.clone(),
                    len: *len,
                });
            }
        }
        Ok(())
    }

    /// cells x repetitions x conversations x prior counts x targets.
    pub fn cardinality(&self) -> usize {
        self.cells.len()
            * self.repetitions
            * self.conversations.len()
            * self.prior_turn_counts.len()
            * self.targets.len()
    }
}

/// All condition keys in a fixed order: cell, repetition, conversation,
/// prior turns, target.
pub fn enumerate_conditions(spec: &GridSpec) -> Result<Vec<ConditionKey>, GridError> {
    spec.validate()?;
    let mut keys = Vec::with_capacity(spec.cardinality());
    for cell in &spec.cells {
        for repetition in 0..spec.repetitions {
            for (id, _) in &spec.conversations {
                for &prior_turns in &spec.prior_turn_counts {
                    for &target in &spec.targets {
                        keys.push(ConditionKey {
                            technique: cell.technique,
                            example_count: cell.example_count,
                            conversation_id: id.clone(),
                            prior_turns,
                            target,
                            repetition,
                        });
                    }
                }
            }
        }
    }
    Ok(keys)
}

/// `count` distinct conversations drawn without replacement.
pub fn select_conversations(
    pool: &[Conversation],
    count: usize,
    seed: u64,
) -> Result<Vec<Conversation>, GridError> {
    select_with(pool, count, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn select_with(
    pool: &[Conversation],
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Conversation>, GridError> {
    if count > pool.len() {
        return Err(GridError::ExampleCount {
            count,
            pool: pool.len(),
        });
    }
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(rng);
    Ok(order[..count].iter().map(|&i| pool[i].clone()).collect())
}

#[derive(Debug, thiserror::Error)]
pub enum SelectError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// Few-shot examples: the same conversations [`select_conversations`] picks
/// for this seed, each cut at a random length ending on an assistant turn and
/// labelled by the evaluator.
pub fn select_examples<E: Evaluator + ?Sized>(
    pool: &[Conversation],
    count: usize,
    seed: u64,
    evaluator: &E,
) -> Result<Vec<AnnotatedExample>, SelectError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen = select_with(pool, count, &mut rng)?;
    chosen
        .into_iter()
        .map(|c| {
            let lengths: Vec<usize> = c.assistant_final_lengths().collect();
            if lengths.is_empty() {
                return Err(PromptError::InvalidExample {
                    index: 0,
                    id: c.id().into(),
                }
                .into());
            }
            let len = lengths[rng.random_range(0..lengths.len())];
            let cut = c.truncate(len).expect("length from the conversation");
            Ok(AnnotatedExample::annotate(cut, evaluator)?)
        })
        .collect()
}

/// Number of distinct assistant-final cuts available in the pool.
pub fn truncation_pool_size(pool: &[Conversation]) -> usize {
    pool.iter().map(|c| c.assistant_final_lengths().count()).sum()
}

/// Few-shot examples drawn as `count` distinct (conversation, length) cuts.
pub fn select_truncations<E: Evaluator + ?Sized>(
    pool: &[Conversation],
    count: usize,
    seed: u64,
    evaluator: &E,
) -> Result<Vec<AnnotatedExample>, SelectError> {
    let mut candidates: Vec<(usize, usize)> = pool
        .iter()
        .enumerate()
        .flat_map(|(i, c)| c.assistant_final_lengths().map(move |len| (i, len)))
        .collect();
    if count > candidates.len() {
        return Err(GridError::ExampleCount {
            count,
            pool: candidates.len(),
        }
        .into());
    }
    candidates.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    candidates[..count]
        .iter()
        .map(|&(i, len)| {
            let cut = pool[i].truncate(len).expect("length from the conversation");
            Ok(AnnotatedExample::annotate(cut, evaluator)?)
        })
        .collect()
}
