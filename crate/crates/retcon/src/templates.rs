//! Template override files.
//!
//! A JSON object with any subset of the template fields; missing fields keep
//! their defaults.

use std::path::Path;

use retcon_core::{PromptError, PromptTemplateSet};

#[derive(Debug, thiserror::Error)]
pub enum TemplateError {
    #[error("cannot read templates `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed template file: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error(transparent)]
    Invalid(#[from] PromptError),
}

pub fn parse_templates(document: &str) -> Result<PromptTemplateSet, TemplateError> {
    let templates: PromptTemplateSet = serde_json::from_str(document)?;
    templates.validate()?;
    Ok(templates)
}

pub fn load_templates(path: &Path) -> Result<PromptTemplateSet, TemplateError> {
    let text = std::fs::read_to_string(path).map_err(|source| TemplateError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_templates(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_override_keeps_defaults() {
        let t = parse_templates(r#"{"final_task_marker": "NOW YOU:"}"#).unwrap();
        assert_eq!(t.final_task_marker, "NOW YOU:");
        assert_eq!(t.overview, PromptTemplateSet::default().overview);
    }

    #[test]
    fn rejects_unknown_fields_and_missing_slots() {
        assert!(matches!(
            parse_templates(r#"{"overveiw": "x"}"#),
            Err(TemplateError::Malformed(_))
        ));
        assert!(matches!(
            parse_templates(r#"{"instruction_respond": "Respond."}"#),
            Err(TemplateError::Invalid(_))
        ));
    }
}
