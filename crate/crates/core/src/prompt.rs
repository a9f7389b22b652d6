//! Prompt construction for zero-shot, few-shot and Retcon prompting.
//!
//! All builders emit one line per layout element joined by `\n`, with no
//! trailing newline. Response blocks span several lines.
//!
//! Few-shot examples end with an instruction and an annotated final turn.
//! Retcon instead places an instruction derived from the evaluator before
//! each (assistant) turn of every example *and* of the live conversation,
//! so every past turn becomes an in-context example.

use alloc::borrow::ToOwned;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::cefr::CefrLevel;
use crate::conversation::{Conversation, Speaker, Turn};
use crate::error::PromptError;
use crate::evaluator::Evaluator;

pub const TARGET_SLOT: &str = "<target>";
pub const TEXT_SLOT: &str = "<text>";
pub const SPEAKER_SLOT: &str = "<speaker>";
pub const INDEX_SLOT: &str = "<index>";

pub const DEFAULT_OVERVIEW: &str = "You are an expert instructor of English as a second language. Help your student practice English conversational skills. Respond, adjusting the difficulty of your responses on the CEFR scale, as instructed.
As a reminder, the CEFR scale is the Common European Framework of Reference. It's used to evaluate the ability of second language learners. Here are the levels:
A1: Student is a complete beginner. Use only the most basic simple words and extremely short sentences with simple construction.
A2: Student has been learning for a year, but is still a beginner. Use simple words and short sentences.
B1: Student has been learning for two years, and is an early intermediate. Use common words and simple sentences.
B2: Student has been learning for three years, and can understand normal conversation. Use normal words and typical sentences.
C1: Student has been learning for four years, and is becoming advanced. Use complex vocabulary and sentence structure.
C2: Student has been learning for more than five years and is an expert in the language. Use extremely complex vocabulary and sentence structure.
Follow instructions in parentheses, but do not respond to the instructions.";

pub const DEFAULT_INSTRUCTION_BEGIN: &str = "Your task: Begin a conversation as ASSISTANT. Your conversation turn must have an English language difficulty of exactly <target> on the CEFR scale.";
pub const DEFAULT_INSTRUCTION_RESPOND: &str = "Your task: Respond as ASSISTANT. Your conversation turn must have an English language difficulty of exactly <target> on the CEFR scale.";
pub const DEFAULT_RESPONSE_FORMAT: &str = "{\n  \"text_difficulty\": \"<target>\",\n  \"text\": \"<text>\"\n}";

/// Which of the two instruction wordings applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InstructionPosition {
    /// No prior turns: the assistant opens the conversation.
    Begin,
    Respond,
}

impl InstructionPosition {
    pub fn for_prior_turns(prior: usize) -> InstructionPosition {
        if prior == 0 {
            InstructionPosition::Begin
        } else {
            InstructionPosition::Respond
        }
    }
}

/// Which turns receive an injected instruction when rewriting history.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InstructionFrequency {
    /// Every other turn: only turns the assistant spoke.
    #[default]
    AssistantTurnsOnly,
    EveryTurn,
}

impl InstructionFrequency {
    fn selects(self, speaker: Speaker) -> bool {
        match self {
            InstructionFrequency::AssistantTurnsOnly => speaker == Speaker::Assistant,
            InstructionFrequency::EveryTurn => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Technique {
    ZeroShot,
    FewShot,
    Retcon,
}

impl Technique {
    pub const ALL: [Technique; 3] = [Technique::ZeroShot, Technique::FewShot, Technique::Retcon];

    pub const fn as_str(self) -> &'static str {
        match self {
            Technique::ZeroShot => "zero-shot",
            Technique::FewShot => "few-shot",
            Technique::Retcon => "retcon",
        }
    }
}

impl fmt::Display for Technique {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for Technique {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Technique::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| alloc::format!("unknown technique `{s}` (expected zero-shot, few-shot or retcon)"))
    }
}

/// Every piece of fixed text a prompt is assembled from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptTemplateSet {
    pub overview: String,
    pub instruction_begin: String,
    pub instruction_respond: String,
    pub response_format: String,
    pub conversation_start_marker: String,
    pub first_speaker_marker: String,
    pub example_header: String,
    pub examples_preamble: String,
    pub final_task_marker: String,
}

impl Default for PromptTemplateSet {
    fn default() -> Self {
        PromptTemplateSet {
            overview: DEFAULT_OVERVIEW.into(),
            instruction_begin: DEFAULT_INSTRUCTION_BEGIN.into(),
            instruction_respond: DEFAULT_INSTRUCTION_RESPOND.into(),
            response_format: DEFAULT_RESPONSE_FORMAT.into(),
            conversation_start_marker: "(START OF CONVERSATION)".into(),
            first_speaker_marker: "(<speaker> will go first.)".into(),
            example_header: "EXAMPLE <index>:".into(),
            examples_preamble: "Follow the following examples".into(),
            final_task_marker: "YOUR TASK:".into(),
        }
    }
}

fn check_slot(field: &'static str, template: &str, slot: &'static str) -> Result<(), PromptError> {
    if template.matches(slot).count() == 1 {
        Ok(())
    } else {
        Err(PromptError::TemplateSlot { field, slot })
    }
}

impl PromptTemplateSet {
    pub fn validate(&self) -> Result<(), PromptError> {
        check_slot("instruction_begin", &self.instruction_begin, TARGET_SLOT)?;
        check_slot("instruction_respond", &self.instruction_respond, TARGET_SLOT)?;
        check_slot("response_format", &self.response_format, TARGET_SLOT)?;
        check_slot("response_format", &self.response_format, TEXT_SLOT)?;
        check_slot("first_speaker_marker", &self.first_speaker_marker, SPEAKER_SLOT)?;
        check_slot("example_header", &self.example_header, INDEX_SLOT)?;
        Ok(())
    }

    fn instruction_template(&self, position: InstructionPosition) -> &str {
        match position {
            InstructionPosition::Begin => &self.instruction_begin,
            InstructionPosition::Respond => &self.instruction_respond,
        }
    }

    /// Parenthesized single-line instruction naming `goal`.
    pub fn instruction(&self, goal: CefrLevel, position: InstructionPosition) -> String {
        let body = self
            .instruction_template(position)
            .replacen(TARGET_SLOT, goal.as_str(), 1);
        let mut line = String::with_capacity(body.len() + 2);
        line.push('(');
        line.push_str(&body);
        line.push(')');
        line
    }

    /// Matches `line` against either instruction wording and returns its level.
    pub fn instruction_level(&self, line: &str) -> Option<CefrLevel> {
        let inner = line.strip_prefix('(')?.strip_suffix(')')?;
        [&self.instruction_respond, &self.instruction_begin]
            .into_iter()
            .find_map(|template| {
                let (head, tail) = template.split_once(TARGET_SLOT)?;
                let token = inner.strip_prefix(head)?.strip_suffix(tail)?;
                token.parse().ok()
            })
    }

    /// The structured reply record carrying `level` and `text`. The text is
    /// JSON-escaped.
    pub fn response_block(&self, level: CefrLevel, text: &str) -> String {
        let quoted = serde_json::to_string(text).expect("strings always serialize");
        let escaped = &quoted[1..quoted.len() - 1];
        // substitute text last so a literal "<target>" inside it survives
        let (head, tail) = self
            .response_format
            .split_once(TEXT_SLOT)
            .unwrap_or((self.response_format.as_str(), ""));
        let mut out = String::with_capacity(self.response_format.len() + escaped.len());
        out.push_str(&head.replacen(TARGET_SLOT, level.as_str(), 1));
        if self.response_format.contains(TEXT_SLOT) {
            out.push_str(escaped);
        }
        out.push_str(&tail.replacen(TARGET_SLOT, level.as_str(), 1));
        out
    }

    pub fn first_speaker(&self, speaker: Speaker) -> String {
        self.first_speaker_marker.replacen(SPEAKER_SLOT, speaker.label(), 1)
    }

    pub fn example_header_for(&self, index: usize) -> String {
        self.example_header
            .replacen(INDEX_SLOT, &index.to_string(), 1)
    }
}

pub fn render_instruction(goal: CefrLevel, position: InstructionPosition) -> String {
    PromptTemplateSet::default().instruction(goal, position)
}

pub fn render_response_block(level: CefrLevel, text: &str) -> String {
    PromptTemplateSet::default().response_block(level, text)
}

/// A complete example conversation whose final (assistant) turn is a good
/// response for `final_goal`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedExample {
    pub conversation: Conversation,
    pub final_goal: CefrLevel,
}

impl AnnotatedExample {
    /// Labels the last turn with the evaluator's quantized level.
    pub fn annotate<E: Evaluator + ?Sized>(
        conversation: Conversation,
        evaluator: &E,
    ) -> Result<AnnotatedExample, PromptError> {
        let last = match conversation.last() {
            Some(t) if t.speaker() == Speaker::Assistant => t,
            _ => {
                return Err(PromptError::InvalidExample {
                    index: 0,
                    id: conversation.id().to_owned(),
                })
            }
        };
        let final_goal = evaluator
            .annotate_goal(last.text())
            .map_err(|e| e.at_turn(conversation.len() - 1))?;
        Ok(AnnotatedExample {
            conversation,
            final_goal,
        })
    }
}

/// A turn with the instruction injected before it, if any.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedTurn {
    pub turn: Turn,
    pub instruction: Option<(CefrLevel, InstructionPosition)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub text: String,
    pub char_length: usize,
    pub instruction_block_count: usize,
    pub technique: Technique,
}

/// Line accumulator that tracks how many instructions it has emitted.
struct Writer<'t> {
    templates: &'t PromptTemplateSet,
    out: String,
    instructions: usize,
}

impl<'t> Writer<'t> {
    fn new(templates: &'t PromptTemplateSet) -> Self {
        Writer {
            templates,
            out: String::new(),
            instructions: 0,
        }
    }

    fn line(&mut self, s: &str) {
        if !self.out.is_empty() {
            self.out.push('\n');
        }
        self.out.push_str(s);
    }

    fn instruction(&mut self, goal: CefrLevel, position: InstructionPosition) {
        let line = self.templates.instruction(goal, position);
        self.line(&line);
        self.instructions += 1;
    }

    fn plain_turn(&mut self, turn: &Turn) {
        if !self.out.is_empty() {
            self.out.push('\n');
        }
        self.out.push_str(turn.speaker().label());
        self.out.push_str(": ");
        self.out.push_str(turn.text());
    }

    fn response(&mut self, level: CefrLevel, text: &str) {
        let block = self.templates.response_block(level, text);
        self.line(&block);
    }

    fn conversation_head(&mut self, conversation: &Conversation) {
        let t = self.templates;
        self.line(&t.overview);
        self.line(&t.conversation_start_marker);
        let first = conversation.first_speaker().unwrap_or(Speaker::Assistant);
        self.line(&t.first_speaker(first));
    }

    fn annotated(&mut self, turns: &[AnnotatedTurn]) {
        for a in turns {
            match a.instruction {
                Some((level, position)) => {
                    self.instruction(level, position);
                    if a.turn.speaker() == Speaker::Assistant {
                        self.response(level, a.turn.text());
                    } else {
                        self.plain_turn(&a.turn);
                    }
                }
                None => self.plain_turn(&a.turn),
            }
        }
    }

    fn finish(self, technique: Technique) -> Prompt {
        Prompt {
            char_length: self.out.chars().count(),
            text: self.out,
            instruction_block_count: self.instructions,
            technique,
        }
    }
}

fn check_prefix(prefix: &Conversation) -> Result<(), PromptError> {
    if prefix.next_speaker() != Speaker::Assistant {
        return Err(PromptError::ResponderMismatch);
    }
    Ok(())
}

/// Instructions only: overview, the live conversation, then the final instruction.
pub fn build_zero_shot(
    templates: &PromptTemplateSet,
    prefix: &Conversation,
    goal: CefrLevel,
) -> Result<Prompt, PromptError> {
    build_few_shot(templates, &[], prefix, goal).map(|mut p| {
        p.technique = Technique::ZeroShot;
        p
    })
}

pub fn build_few_shot(
    templates: &PromptTemplateSet,
    examples: &[AnnotatedExample],
    prefix: &Conversation,
    goal: CefrLevel,
) -> Result<Prompt, PromptError> {
    check_prefix(prefix)?;
    for (index, ex) in examples.iter().enumerate() {
        match ex.conversation.last() {
            Some(t) if t.speaker() == Speaker::Assistant => {}
            _ => {
                return Err(PromptError::InvalidExample {
                    index,
                    id: ex.conversation.id().to_owned(),
                })
            }
        }
    }

    let mut w = Writer::new(templates);
    if !examples.is_empty() {
        w.line(&templates.overview);
        w.line(&templates.examples_preamble);
        for (index, ex) in examples.iter().enumerate() {
            w.line(&templates.example_header_for(index));
            w.conversation_head(&ex.conversation);
            let (last, earlier) = ex.conversation.turns().split_last().expect("checked");
            for turn in earlier {
                w.plain_turn(turn);
            }
            w.instruction(ex.final_goal, InstructionPosition::for_prior_turns(earlier.len()));
            w.response(ex.final_goal, last.text());
        }
        w.line(&templates.final_task_marker);
    }
    w.conversation_head(prefix);
    for turn in prefix.turns() {
        w.plain_turn(turn);
    }
    w.instruction(goal, InstructionPosition::for_prior_turns(prefix.len()));
    Ok(w.finish(Technique::FewShot))
}

/// Rewrites a conversation's history: each turn selected by `frequency` gets
/// an instruction naming the evaluator's level for that turn.
pub fn annotate_for_retcon<E: Evaluator + ?Sized>(
    conversation: &Conversation,
    evaluator: &E,
    frequency: InstructionFrequency,
) -> Result<Vec<AnnotatedTurn>, PromptError> {
    conversation
        .turns()
        .iter()
        .enumerate()
        .map(|(index, turn)| {
            let instruction = if frequency.selects(turn.speaker()) {
                let level = evaluator
                    .annotate_goal(turn.text())
                    .map_err(|e| e.at_turn(index))?;
                Some((level, InstructionPosition::for_prior_turns(index)))
            } else {
                None
            };
            Ok(AnnotatedTurn {
                turn: turn.clone(),
                instruction,
            })
        })
        .collect()
}

pub fn build_retcon<E: Evaluator + ?Sized>(
    templates: &PromptTemplateSet,
    examples: &[Conversation],
    prefix: &Conversation,
    goal: CefrLevel,
    evaluator: &E,
    frequency: InstructionFrequency,
) -> Result<Prompt, PromptError> {
    check_prefix(prefix)?;
    let mut w = Writer::new(templates);
    if !examples.is_empty() {
        w.line(&templates.overview);
        w.line(&templates.examples_preamble);
        for (index, ex) in examples.iter().enumerate() {
            w.line(&templates.example_header_for(index));
            w.conversation_head(ex);
            let annotated = annotate_for_retcon(ex, evaluator, frequency)?;
            w.annotated(&annotated);
        }
        w.line(&templates.final_task_marker);
    }
    w.conversation_head(prefix);
    let annotated = annotate_for_retcon(prefix, evaluator, frequency)?;
    w.annotated(&annotated);
    w.instruction(goal, InstructionPosition::for_prior_turns(prefix.len()));
    Ok(w.finish(Technique::Retcon))
}

/// Turn count and opening speaker of one example conversation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExampleShape {
    pub turns: usize,
    pub first_speaker: Speaker,
}

impl ExampleShape {
    pub fn of(conversation: &Conversation) -> ExampleShape {
        ExampleShape {
            turns: conversation.len(),
            first_speaker: conversation.first_speaker().unwrap_or(Speaker::Assistant),
        }
    }

    fn assistant_turns(&self) -> usize {
        match self.first_speaker {
            Speaker::Assistant => self.turns.div_ceil(2),
            Speaker::Student => self.turns / 2,
        }
    }
}

/// Number of annotated example turns a prompt shows the model, excluding the
/// final instruction. `final_turn` is k_f: the prompt asks for turn k_f after
/// k_f - 1 prior turns, the last of which is the student's.
pub fn expected_example_count(
    technique: Technique,
    frequency: InstructionFrequency,
    examples: &[ExampleShape],
    final_turn: usize,
) -> usize {
    let prior = final_turn.saturating_sub(1);
    match technique {
        Technique::ZeroShot => 0,
        Technique::FewShot => examples.len(),
        Technique::Retcon => match frequency {
            InstructionFrequency::EveryTurn => {
                examples.iter().map(|e| e.turns).sum::<usize>() + prior
            }
            // the prior turn at index prior-1 is the student's, so assistant
            // turns sit at prior-2, prior-4, ...
            InstructionFrequency::AssistantTurnsOnly => {
                examples.iter().map(ExampleShape::assistant_turns).sum::<usize>() + prior / 2
            }
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluator::HeuristicScorer;
    use alloc::format;
    use alloc::vec;

    fn campfire(n: usize) -> Conversation {
        Conversation::alternating(
            "campfire",
            Speaker::Student,
            [
                "Did you bring matches for the campfire?",
                "I'm not sure. Were they on my list?",
                "I think I forgot to put them on either list. They were so obvious.",
                "Oh no. Did you bring anything else that might help?",
            ]
            .into_iter()
            .take(n),
        )
        .unwrap()
    }

    #[test]
    fn instruction_wording() {
        assert_eq!(
            render_instruction(CefrLevel::B1, InstructionPosition::Respond),
            "(Your task: Respond as ASSISTANT. Your conversation turn must have an English language difficulty of exactly B1 on the CEFR scale.)"
        );
        assert_eq!(
            render_instruction(CefrLevel::C2, InstructionPosition::Begin),
            "(Your task: Begin a conversation as ASSISTANT. Your conversation turn must have an English language difficulty of exactly C2 on the CEFR scale.)"
        );
    }

    #[test]
    fn instruction_level_roundtrip() {
        let t = PromptTemplateSet::default();
        for level in CefrLevel::ALL {
            for pos in [InstructionPosition::Begin, InstructionPosition::Respond] {
                assert_eq!(t.instruction_level(&t.instruction(level, pos)), Some(level));
            }
        }
        assert_eq!(t.instruction_level("STUDENT: hello"), None);
    }

    #[test]
    fn response_block_layout() {
        assert_eq!(
            render_response_block(CefrLevel::A1, "Hi."),
            "{\n  \"text_difficulty\": \"A1\",\n  \"text\": \"Hi.\"\n}"
        );
        assert_eq!(
            render_response_block(CefrLevel::B2, "say \"<target>\""),
            "{\n  \"text_difficulty\": \"B2\",\n  \"text\": \"say \\\"<target>\\\"\"\n}"
        );
    }

    #[test]
    fn zero_shot_empty_prefix_begins() {
        let t = PromptTemplateSet::default();
        let p = build_zero_shot(&t, &Conversation::empty("e").unwrap(), CefrLevel::A1).unwrap();
        let expected = format!(
            "{}\n(START OF CONVERSATION)\n(ASSISTANT will go first.)\n{}",
            DEFAULT_OVERVIEW,
            render_instruction(CefrLevel::A1, InstructionPosition::Begin)
        );
        assert_eq!(p.text, expected);
        assert_eq!(p.instruction_block_count, 1);
        assert_eq!(p.technique, Technique::ZeroShot);
        assert_eq!(p.char_length, p.text.chars().count());
    }

    #[test]
    fn prefix_ending_with_assistant_rejected() {
        let t = PromptTemplateSet::default();
        assert_eq!(
            build_zero_shot(&t, &campfire(2), CefrLevel::A1),
            Err(PromptError::ResponderMismatch)
        );
        assert_eq!(
            build_retcon(&t, &[], &campfire(2), CefrLevel::A1, &HeuristicScorer, Default::default()),
            Err(PromptError::ResponderMismatch)
        );
    }

    #[test]
    fn few_shot_rejects_student_final_example() {
        let t = PromptTemplateSet::default();
        let bad = AnnotatedExample {
            conversation: campfire(3),
            final_goal: CefrLevel::B1,
        };
        let good = AnnotatedExample {
            conversation: campfire(2),
            final_goal: CefrLevel::B1,
        };
        let err = build_few_shot(&t, &[good, bad], &campfire(1), CefrLevel::A1).unwrap_err();
        assert_eq!(
            err,
            PromptError::InvalidExample {
                index: 1,
                id: "campfire".into()
            }
        );
    }

    #[test]
    fn retcon_every_turn_counts_all_turns() {
        let annotated =
            annotate_for_retcon(&campfire(4), &HeuristicScorer, InstructionFrequency::EveryTurn)
                .unwrap();
        assert_eq!(annotated.iter().filter(|a| a.instruction.is_some()).count(), 4);
        let only_assistant = annotate_for_retcon(
            &campfire(4),
            &HeuristicScorer,
            InstructionFrequency::AssistantTurnsOnly,
        )
        .unwrap();
        assert_eq!(
            only_assistant.iter().filter(|a| a.instruction.is_some()).count(),
            2
        );
        assert!(annotate_for_retcon(
            &Conversation::empty("e").unwrap(),
            &HeuristicScorer,
            InstructionFrequency::EveryTurn
        )
        .unwrap()
        .is_empty());
    }

    #[test]
    fn bad_templates_rejected() {
        let mut t = PromptTemplateSet::default();
        t.instruction_respond = "Respond at <target> or <target>".into();
        assert_eq!(
            t.validate(),
            Err(PromptError::TemplateSlot {
                field: "instruction_respond",
                slot: TARGET_SLOT
            })
        );
        assert!(PromptTemplateSet::default().validate().is_ok());
    }

    #[test]
    fn expected_counts() {
        let twenty = vec![
            ExampleShape {
                turns: 20,
                first_speaker: Speaker::Assistant
            };
            10
        ];
        assert_eq!(
            expected_example_count(Technique::Retcon, InstructionFrequency::EveryTurn, &twenty, 1),
            200
        );
        assert_eq!(
            expected_example_count(Technique::FewShot, InstructionFrequency::EveryTurn, &twenty, 1),
            10
        );
        assert_eq!(
            expected_example_count(Technique::Retcon, InstructionFrequency::EveryTurn, &[], 1),
            0
        );
        assert_eq!(
            expected_example_count(
                Technique::Retcon,
                InstructionFrequency::AssistantTurnsOnly,
                &twenty,
                21
            ),
            110
        );
    }
}
