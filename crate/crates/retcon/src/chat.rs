//! Interactive session: the operator plays the student and steers the
//! assistant's difficulty turn by turn.
//!
//! Commands: `/goal <level>` sets the goal for following replies, `/begin`
//! asks the assistant to open the conversation, `/quit` ends the session.
//! Any other line is a student turn.

use std::io::{self, BufRead, Write};

use retcon_core::{
    build_retcon, squared_error, CefrLevel, Conversation, Evaluator, InstructionFrequency, PromptTemplateSet,
    Speaker, Turn,
};

use crate::gateway::{Backend, CompletionRequest, Gateway};

#[derive(Debug, Clone)]
pub struct ChatSettings {
    pub templates: PromptTemplateSet,
    pub examples: Vec<Conversation>,
    pub frequency: InstructionFrequency,
    pub goal: CefrLevel,
    pub attempt_budget: u32,
}

const HELP: &str = "commands: /goal <A1..C2>, /begin, /quit; anything else is your next line";

pub fn run_chat<B: Backend, E: Evaluator + ?Sized>(
    mut settings: ChatSettings,
    gateway: &Gateway<B>,
    evaluator: &E,
    input: &mut dyn BufRead,
    out: &mut dyn Write,
) -> io::Result<()> {
    let mut turns: Vec<Turn> = Vec::new();
    writeln!(out, "goal: {}  ({HELP})", settings.goal)?;
    for line in input.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(cmd) = line.strip_prefix('/') {
            let (name, arg) = cmd.split_once(' ').unwrap_or((cmd, ""));
            match name {
                "quit" => break,
                "goal" => match arg.trim().parse::<CefrLevel>() {
                    Ok(level) => {
                        settings.goal = level;
                        writeln!(out, "goal: {level}")?;
                    }
                    Err(e) => writeln!(out, "invalid goal: {e}; goal stays {}", settings.goal)?,
                },
                "begin" if turns.is_empty() => reply(&settings, gateway, evaluator, &mut turns, out)?,
                "begin" => writeln!(out, "/begin only works before the first turn")?,
                _ => writeln!(out, "unknown command /{name}; {HELP}")?,
            }
            continue;
        }
        if turns.last().is_some_and(|t| t.speaker() == Speaker::Student) {
            writeln!(out, "waiting for the assistant; use /quit to stop")?;
            continue;
        }
        match Turn::new(Speaker::Student, line) {
            Ok(t) => turns.push(t),
            Err(e) => {
                writeln!(out, "error: {e}")?;
                continue;
            }
        }
        reply(&settings, gateway, evaluator, &mut turns, out)?;
    }
    Ok(())
}

/// Generates and measures the assistant's next turn. On failure the pending
/// student turn is withdrawn so the operator can retry.
fn reply<B: Backend, E: Evaluator + ?Sized>(
    settings: &ChatSettings,
    gateway: &Gateway<B>,
    evaluator: &E,
    turns: &mut Vec<Turn>,
    out: &mut dyn Write,
) -> io::Result<()> {
    let outcome = (|| -> Result<(String, f64, CefrLevel), String> {
        let history = Conversation::new("chat", turns.clone()).map_err(|e| e.to_string())?;
        let prompt = build_retcon(
            &settings.templates,
            &settings.examples,
            &history,
            settings.goal,
            evaluator,
            settings.frequency,
        )
        .map_err(|e| e.to_string())?;
        let request = CompletionRequest::new(prompt).with_attempts(settings.attempt_budget);
        let generation = gateway.generate(&request).map_err(|e| e.to_string())?;
        let measured = evaluator.score(&generation.parsed.text).map_err(|e| e.to_string())?;
        Ok((generation.parsed.text, measured.value(), measured.level()))
    })();
    match outcome {
        Ok((text, measured, level)) => {
            let error = squared_error(
                settings.goal,
                retcon_core::DifficultyScore::new(measured).expect("evaluator scores are in range"),
            );
            writeln!(out, "ASSISTANT: {text}")?;
            writeln!(
                out,
                "  measured {measured:.2} ({level}), goal {}, squared error {error:.4}",
                settings.goal
            )?;
            match Turn::new(Speaker::Assistant, text) {
                Ok(t) => turns.push(t),
                Err(e) => {
                    writeln!(out, "error: reply not kept: {e}")?;
                    withdraw_student(turns);
                }
            }
        }
        Err(e) => {
            writeln!(out, "error: {e}")?;
            withdraw_student(turns);
        }
    }
    Ok(())
}

fn withdraw_student(turns: &mut Vec<Turn>) {
    if turns.last().is_some_and(|t| t.speaker() == Speaker::Student) {
        turns.pop();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{MockBackend, MockBank};
    use retcon_core::HeuristicScorer;

    fn session(input: &str, backend: MockBackend) -> String {
        let settings = ChatSettings {
            templates: PromptTemplateSet::default(),
            examples: Vec::new(),
            frequency: InstructionFrequency::AssistantTurnsOnly,
            goal: CefrLevel::B1,
            attempt_budget: 1,
        };
        let gw = Gateway::new(backend, 1);
        let mut out = Vec::new();
        run_chat(settings, &gw, &HeuristicScorer, &mut input.as_bytes(), &mut out).unwrap();
        String::from_utf8(out).unwrap()
    }

    #[test]
    fn goal_then_student_line_measures_reply() {
        let out = session("/goal A2\nHello!\n/quit\nignored\n", MockBackend::compliant(MockBank::builtin()));
        assert!(out.contains("goal: A2"), "{out}");
        assert!(out.contains("ASSISTANT: No walk."), "{out}");
        assert!(out.contains("measured 2.00 (A2), goal A2, squared error 0.0000"), "{out}");
        assert!(!out.contains("ignored"));
    }

    #[test]
    fn bad_goal_keeps_previous() {
        let out = session("/goal X1\n", MockBackend::compliant(MockBank::builtin()));
        assert!(out.contains("invalid goal"), "{out}");
        assert!(out.contains("goal stays B1"), "{out}");
    }

    #[test]
    fn backend_failure_is_inline_and_session_continues() {
        let out = session("Hi.\nHi again.\n", MockBackend::scripted(Vec::<String>::new()));
        assert_eq!(out.matches("error: generation failed").count(), 2, "{out}");
    }

    #[test]
    fn begin_opens_conversation() {
        let out = session("/begin\n/begin\n", MockBackend::compliant(MockBank::builtin()));
        assert!(out.contains("ASSISTANT: This room will help."), "{out}");
        assert!(out.contains("/begin only works"), "{out}");
    }
}
