//! Parsing model replies back into a level and a text.

use alloc::borrow::ToOwned;
use alloc::string::String;

use serde_json::{Map, Value};

use crate::cefr::CefrLevel;
use crate::error::ParseError;
use crate::prompt::{Prompt, PromptTemplateSet};

pub const LEVEL_FIELD: &str = "text_difficulty";
pub const TEXT_FIELD: &str = "text";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedResponse {
    pub declared_level: CefrLevel,
    pub text: String,
    pub raw: String,
}

/// Byte ranges of balanced `{...}` spans, skipping braces inside strings.
fn balanced_objects(s: &str) -> impl Iterator<Item = &str> + '_ {
    let bytes = s.as_bytes();
    let mut start = 0;
    core::iter::from_fn(move || {
        while start < bytes.len() {
            let open = start + s[start..].find('{')?;
            start = open + 1;
            let mut depth = 0usize;
            let mut in_str = false;
            let mut escaped = false;
            for (i, &b) in bytes[open..].iter().enumerate() {
                if in_str {
                    match b {
                        _ if escaped => escaped = false,
                        b'\\' => escaped = true,
                        b'"' => in_str = false,
                        _ => {}
                    }
                    continue;
                }
                match b {
                    b'"' => in_str = true,
                    b'{' => depth += 1,
                    b'}' => {
                        depth -= 1;
                        if depth == 0 {
                            return Some(&s[open..=open + i]);
                        }
                    }
                    _ => {}
                }
            }
        }
        None
    })
}

fn strip_fences(raw: &str) -> String {
    raw.lines()
        .filter(|l| !l.trim_start().starts_with("```"))
        .collect::<alloc::vec::Vec<_>>()
        .join("\n")
}

/// Finds the first JSON object in the reply (tolerating code fences and
/// surrounding prose) and validates its two fields.
pub fn parse_response(raw: &str) -> Result<ParsedResponse, ParseError> {
    let cleaned = strip_fences(raw);
    let record: Map<String, Value> = balanced_objects(&cleaned)
        .find_map(|span| match serde_json::from_str::<Value>(span) {
            Ok(Value::Object(map)) => Some(map),
            _ => None,
        })
        .ok_or(ParseError::NoRecord)?;

    let level_token = record
        .get(LEVEL_FIELD)
        .and_then(Value::as_str)
        .ok_or(ParseError::MissingField(LEVEL_FIELD))?;
    let text = record
        .get(TEXT_FIELD)
        .and_then(Value::as_str)
        .ok_or(ParseError::MissingField(TEXT_FIELD))?;
    let declared_level = level_token
        .parse::<CefrLevel>()
        .map_err(|_| ParseError::UnknownLevel(level_token.to_owned()))?;
    if text.trim().is_empty() {
        return Err(ParseError::EmptyText);
    }
    Ok(ParsedResponse {
        declared_level,
        text: text.to_owned(),
        raw: raw.to_owned(),
    })
}

/// Level named by the last instruction line of the prompt text.
pub fn extract_target_level_from(
    templates: &PromptTemplateSet,
    text: &str,
) -> Result<CefrLevel, ParseError> {
    text.lines()
        .rev()
        .find_map(|line| templates.instruction_level(line))
        .ok_or(ParseError::NoInstruction)
}

pub fn extract_target_level(prompt: &Prompt) -> Result<CefrLevel, ParseError> {
    extract_target_level_from(&PromptTemplateSet::default(), &prompt.text)
}
