#![allow(dead_code)]

use std::collections::HashMap;

use retcon_core::{CefrLevel, Conversation, DifficultyScore, EvalError, Evaluator, Speaker};

pub const ZERO_SHOT: &str = include_str!("../golden/zero_shot.txt");
pub const FEW_SHOT: &str = include_str!("../golden/few_shot.txt");
pub const RETCON: &str = include_str!("../golden/retcon.txt");

pub const PHONE_OR_COMPUTER: [&str; 20] = [
    "Which do you like better, your phone or your computer?",
    "Well, I'm upon my phone twenty-four seven, and I'm obligated to use my computer to acquire money, so I'd hazard both are pretty terrible for me as a human being. What sort of choice do you expect?",
    "Easy, which one would you rather live without?",
    "Do I have a job?",
    "Can you afford not to?",
    "No.",
    "Then yes, you still have to work.",
    "Would I be permitted to just go out and buy another one, either immediately, or in a week or a year, or, would I be coerced into spending my entire life without acquiring the one I forgo?",
    "Designate one and endure perpetually.",
    "Well, then obviously computer. It's hard to do anything if I can't work.",
    "I see your point. Perhaps my inquiry was somewhat lacking in rationality.",
    "Exactly. Which would you rather have, your head or your body?",
    "Is the cell phone the head, or the computer?",
    "I think the computer is the body, since it does all the work. And the cell phone is the head, because it just mindlessly scrolls all day.",
    "You're funny. How about for a week?",
    "Let's talk about something else. How's your kid doing in school?",
    "Oh, she's great! She's just finishing up her senior year. She got accepted in all the schools she applied to!",
    "Great! Where is she going?",
    "Yeah, she's going to Berkeley, can you believe it?",
    "Indeed, the sense of accomplishment must be palpable. Seeing your efforts come to fruition is truly gratifying. Congratulations are in order!",
];

pub fn phone_or_computer() -> Conversation {
    Conversation::alternating("phone-or-computer", Speaker::Assistant, PHONE_OR_COMPUTER).unwrap()
}

pub fn campfire(turns: usize) -> Conversation {
    Conversation::alternating(
        "campfire",
        Speaker::Student,
        [
            "Did you bring matches for the campfire?",
            "I'm not sure. Were they on my list?",
            "I think I forgot to put them on either list. They were so obvious.",
        ]
        .into_iter()
        .take(turns),
    )
    .unwrap()
}

pub fn gallery_example() -> Conversation {
    Conversation::alternating(
        "gallery",
        Speaker::Assistant,
        [
            "Did you hear about the time an art piece was lost in transit and the gallery displayed just the pedestal?",
            "What do you mean?",
            "I fail to recall where exactly, but this was many years ago. An artist posted a sculpture to a museum, but the package split up in mid-transit and only the pedestal delivered.",
            "And they displayed it?",
            "Yes, and while that's understandable at first, the artist quickly realized their misunderstanding, and let them know, but by that point it was too late, and the quote unquote sculpture was seen by a ton of visitors.",
        ],
    )
    .unwrap()
}

pub fn heatwave_example() -> Conversation {
    Conversation::alternating(
        "heatwave",
        Speaker::Student,
        [
            "It's hot!",
            "I concur, it beggars belief. I'm sweating through all my clothes, and it's barely the end of spring.",
        ],
    )
    .unwrap()
}

/// Evaluator backed by a fixed text -> score table.
pub struct TableEvaluator(pub HashMap<String, f64>);

impl TableEvaluator {
    /// The reference levels printed for the assistant turns of the Retcon example.
    pub fn retcon_reference() -> Self {
        let levels = [
            (PHONE_OR_COMPUTER[0], CefrLevel::B1),
            (PHONE_OR_COMPUTER[2], CefrLevel::B2),
            (PHONE_OR_COMPUTER[4], CefrLevel::B1),
            (PHONE_OR_COMPUTER[6], CefrLevel::B1),
            (PHONE_OR_COMPUTER[8], CefrLevel::C2),
            (PHONE_OR_COMPUTER[10], CefrLevel::C2),
            (PHONE_OR_COMPUTER[12], CefrLevel::B1),
            (PHONE_OR_COMPUTER[14], CefrLevel::B1),
            (PHONE_OR_COMPUTER[16], CefrLevel::B2),
            (PHONE_OR_COMPUTER[18], CefrLevel::B2),
            ("I'm not sure. Were they on my list?", CefrLevel::B1),
        ];
        TableEvaluator(
            levels
                .into_iter()
                .map(|(t, l)| (t.to_owned(), f64::from(l.scalar())))
                .collect(),
        )
    }
}

impl Evaluator for TableEvaluator {
    fn score(&self, text: &str) -> Result<DifficultyScore, EvalError> {
        let v = self.0.get(text).ok_or_else(|| EvalError::Unavailable {
            text_hash: retcon_core::text_digest(text),
        })?;
        Ok(DifficultyScore::new(*v).unwrap())
    }

    fn backend(&self) -> &str {
        "table"
    }
}

/// Counts instruction lines by prefix alone, independent of the builder's
/// own bookkeeping.
pub fn count_instruction_lines(text: &str) -> usize {
    text.lines().filter(|l| l.starts_with("(Your task: ")).count()
}
