//! Deterministic stand-ins for a language model.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Mutex;
use std::time::Duration;

use retcon_core::response::extract_target_level_from;
use retcon_core::{heuristic_score, text_digest, CefrLevel, PromptTemplateSet};
use serde::{Deserialize, Serialize};

use super::{Backend, CompletionRequest, TransportError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BankEntry {
    pub text: String,
    pub precomputed_heuristic_score: f64,
}

/// Canned reply texts per level, each stored with its heuristic score.
///
/// File form: `{"A1": [{"text": "...", "precomputed_heuristic_score": 1.0}], ...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MockBank {
    entries: BTreeMap<CefrLevel, Vec<BankEntry>>,
}

#[derive(Debug, thiserror::Error)]
pub enum MockBankError {
    #[error("malformed mock bank: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("mock bank has no text for {0}")]
    MissingLevel(CefrLevel),
    #[error("mock bank text {text:?} is not scoreable")]
    Unscoreable { text: String },
    #[error("mock bank text {text:?} stores score {stored} but scores {actual}")]
    StaleScore { text: String, stored: f64, actual: f64 },
}

const BUILTIN: &[(CefrLevel, &str)] = &[
    (CefrLevel::A1, "Oh. I."),
    (CefrLevel::A2, "Go up."),
    (CefrLevel::A2, "No walk."),
    (CefrLevel::B1, "Very good."),
    (CefrLevel::B1, "This room will help."),
    (CefrLevel::B2, "Please listen."),
    (CefrLevel::B2, "Honest people should listen."),
    (CefrLevel::C1, "Honest people should listen before acting."),
    (CefrLevel::C1, "Honest people should always listen before acting calmly."),
    (CefrLevel::C2, "Thorough analysis requires balanced critical judgment."),
    (CefrLevel::C2, "Thorough analysis requires balanced critical judgment whenever possible."),
];

impl MockBank {
    /// Texts scoring exactly 1.0, 1.5, ..., 6.0 under the heuristic, filed
    /// under the level each quantizes to.
    pub fn builtin() -> MockBank {
        let mut entries: BTreeMap<CefrLevel, Vec<BankEntry>> = BTreeMap::new();
        for &(level, text) in BUILTIN {
            entries.entry(level).or_default().push(BankEntry {
                text: text.to_owned(),
                precomputed_heuristic_score: heuristic_score(text).expect("builtin text").value(),
            });
        }
        MockBank { entries }
    }

    pub fn from_json(document: &str) -> Result<MockBank, MockBankError> {
        let bank: MockBank = serde_json::from_str(document)?;
        bank.validate()?;
        Ok(bank)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bank serializes")
    }

    /// Every level has a text, and every stored score is the text's current
    /// heuristic score.
    pub fn validate(&self) -> Result<(), MockBankError> {
        for level in CefrLevel::ALL {
            if self.entries.get(&level).is_none_or(Vec::is_empty) {
                return Err(MockBankError::MissingLevel(level));
            }
        }
        for e in self.entries.values().flatten() {
            let actual = heuristic_score(&e.text)
                .map_err(|_| MockBankError::Unscoreable { text: e.text.clone() })?
                .value();
            if e.text.contains('\n') {
                return Err(MockBankError::Unscoreable { text: e.text.clone() });
            }
            if (actual - e.precomputed_heuristic_score).abs() > 1e-12 {
                return Err(MockBankError::StaleScore {
                    text: e.text.clone(),
                    stored: e.precomputed_heuristic_score,
                    actual,
                });
            }
        }
        Ok(())
    }

    pub fn entries(&self, level: CefrLevel) -> &[BankEntry] {
        self.entries.get(&level).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Entry filed under `level` whose score is closest to the level's scalar.
    pub fn compliant(&self, level: CefrLevel) -> Option<&BankEntry> {
        nearest(self.entries(level).iter(), f64::from(level.scalar()))
    }

    /// Entry anywhere in the bank whose score is closest to `value`.
    pub fn nearest(&self, value: f64) -> Option<&BankEntry> {
        nearest(self.entries.values().flatten(), value)
    }
}

fn nearest<'a>(entries: impl Iterator<Item = &'a BankEntry>, value: f64) -> Option<&'a BankEntry> {
    entries.fold(None, |best: Option<&BankEntry>, e| match best {
        Some(b) if (b.precomputed_heuristic_score - value).abs() <= (e.precomputed_heuristic_score - value).abs() => {
            Some(b)
        }
        _ => Some(e),
    })
}

#[derive(Debug, Clone)]
pub enum MockBehavior {
    /// Raw replies handed out in FIFO order; an empty queue is a transport failure.
    Scripted(VecDeque<String>),
    /// Replies with the bank text for the level named in the prompt's last instruction.
    Compliant(MockBank),
    /// Aims at target + offset, reflected to target - offset when that leaves
    /// [1, 6], then replies with the nearest bank text. With several offsets,
    /// the prompt's digest picks one, so replies do not depend on call order.
    NoisyCompliant { bank: MockBank, offsets: Vec<f64> },
}

pub struct MockBackend {
    templates: PromptTemplateSet,
    behavior: Mutex<MockBehavior>,
    latency: Option<Duration>,
}

impl MockBackend {
    pub fn new(behavior: MockBehavior) -> MockBackend {
        MockBackend {
            templates: PromptTemplateSet::default(),
            behavior: Mutex::new(behavior),
            latency: None,
        }
    }

    pub fn scripted<I, S>(replies: I) -> MockBackend
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        MockBackend::new(MockBehavior::Scripted(replies.into_iter().map(Into::into).collect()))
    }

    pub fn compliant(bank: MockBank) -> MockBackend {
        MockBackend::new(MockBehavior::Compliant(bank))
    }

    pub fn noisy(bank: MockBank, offsets: Vec<f64>) -> MockBackend {
        MockBackend::new(MockBehavior::NoisyCompliant { bank, offsets })
    }

    /// Templates used to find the instruction lines in prompts.
    pub fn with_templates(mut self, templates: PromptTemplateSet) -> Self {
        self.templates = templates;
        self
    }

    /// Sleep this long before each reply.
    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = Some(latency);
        self
    }

    fn reply_for(&self, bank: &MockBank, level: CefrLevel, aim: f64) -> Result<String, TransportError> {
        let entry = bank
            .nearest(aim)
            .ok_or_else(|| TransportError("mock bank is empty".into()))?;
        Ok(self.templates.response_block(level, &entry.text))
    }
}

fn offset_aim(target: f64, offset: f64) -> f64 {
    let up = target + offset;
    if (1.0..=6.0).contains(&up) {
        up
    } else {
        target - offset
    }
}

impl Backend for MockBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, TransportError> {
        if let Some(d) = self.latency {
            std::thread::sleep(d);
        }
        let target = || {
            extract_target_level_from(&self.templates, &request.prompt.text)
                .map_err(|e| TransportError(format!("mock cannot read target: {e}")))
        };
        let mut behavior = self.behavior.lock().unwrap_or_else(|e| e.into_inner());
        match &mut *behavior {
            MockBehavior::Scripted(queue) => queue
                .pop_front()
                .ok_or_else(|| TransportError("scripted reply queue is empty".into())),
            MockBehavior::Compliant(bank) => {
                let level = target()?;
                let entry = bank
                    .compliant(level)
                    .ok_or_else(|| TransportError(format!("mock bank has no text for {level}")))?;
                Ok(self.templates.response_block(level, &entry.text))
            }
            MockBehavior::NoisyCompliant { bank, offsets } => {
                let level = target()?;
                let offset = if offsets.is_empty() {
                    0.0
                } else {
                    let digest = text_digest(&request.prompt.text);
                    let idx = u64::from_str_radix(&digest[..16], 16).expect("hex digest");
                    offsets[(idx % offsets.len() as u64) as usize]
                };
                self.reply_for(bank, level, offset_aim(f64::from(level.scalar()), offset))
            }
        }
    }

    fn tag(&self) -> String {
        let behavior = self.behavior.lock().unwrap_or_else(|e| e.into_inner());
        match &*behavior {
            MockBehavior::Scripted(_) => "mock:scripted".into(),
            MockBehavior::Compliant(_) => "mock:compliant".into(),
            MockBehavior::NoisyCompliant { offsets, .. } => format!("mock:noisy{offsets:?}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use retcon_core::{build_zero_shot, parse_response, Conversation};

    fn request(level: CefrLevel) -> CompletionRequest {
        let prompt = build_zero_shot(
            &PromptTemplateSet::default(),
            &Conversation::empty("x").unwrap(),
            level,
        )
        .unwrap();
        CompletionRequest::new(prompt)
    }

    #[test]
    fn builtin_bank_hits_every_half_step() {
        let bank = MockBank::builtin();
        bank.validate().unwrap();
        let mut scores: Vec<f64> = CefrLevel::ALL
            .iter()
            .flat_map(|&l| bank.entries(l).iter().map(|e| e.precomputed_heuristic_score))
            .collect();
        scores.sort_by(f64::total_cmp);
        let expected: Vec<f64> = (2..=12).map(|i| f64::from(i) / 2.0).collect();
        assert_eq!(scores, expected);
        for l in CefrLevel::ALL {
            assert_eq!(bank.compliant(l).unwrap().precomputed_heuristic_score, f64::from(l.scalar()));
        }
    }

    #[test]
    fn compliant_reply_scores_exactly() {
        let mock = MockBackend::compliant(MockBank::builtin());
        for l in CefrLevel::ALL {
            let parsed = parse_response(&mock.complete(&request(l)).unwrap()).unwrap();
            assert_eq!(parsed.declared_level, l);
            assert_eq!(heuristic_score(&parsed.text).unwrap().value(), f64::from(l.scalar()));
        }
    }

    #[test]
    fn noisy_reply_is_off_by_offset() {
        let mock = MockBackend::noisy(MockBank::builtin(), vec![0.5]);
        for l in CefrLevel::ALL {
            let parsed = parse_response(&mock.complete(&request(l)).unwrap()).unwrap();
            let s = heuristic_score(&parsed.text).unwrap().value();
            assert_eq!((s - f64::from(l.scalar())).abs(), 0.5, "{l}");
        }
    }

    #[test]
    fn bank_file_round_trip_and_validation() {
        let bank = MockBank::builtin();
        assert_eq!(MockBank::from_json(&bank.to_json()).unwrap(), bank);
        assert!(matches!(
            MockBank::from_json(r#"{"A1": [{"text": "Oh. I.", "precomputed_heuristic_score": 1.0}]}"#),
            Err(MockBankError::MissingLevel(CefrLevel::A2))
        ));
        let stale = bank.to_json().replacen("1.0", "1.25", 1);
        assert!(matches!(MockBank::from_json(&stale), Err(MockBankError::StaleScore { .. })));
    }

    #[test]
    fn prompt_without_instruction_is_transport_error() {
        let mock = MockBackend::compliant(MockBank::builtin());
        let mut req = request(CefrLevel::A1);
        req.prompt.text = "hello".into();
        assert!(mock.complete(&req).is_err());
    }
}
