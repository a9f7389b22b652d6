//! Generation over prompts: the backend contract, retrying gateway, mock
//! backends and an HTTP adapter.

mod http_backend;
mod mock;

use std::collections::BTreeMap;
use std::sync::Arc;

use retcon_core::{parse_response, ParseError, ParsedResponse, Prompt};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::sync::Semaphore;

pub use http_backend::{HttpBackend, HttpBackendConfig, HttpConfigError};
pub use mock::{BankEntry, MockBank, MockBankError, MockBackend, MockBehavior};

/// Names of the two fields a reply record must carry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaHint {
    pub level_field: String,
    pub text_field: String,
}

impl Default for SchemaHint {
    fn default() -> Self {
        SchemaHint {
            level_field: retcon_core::response::LEVEL_FIELD.into(),
            text_field: retcon_core::response::TEXT_FIELD.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub prompt: Prompt,
    pub schema_hint: SchemaHint,
    /// Passed through to the backend untouched (temperature and the like).
    pub decode_params: BTreeMap<String, Value>,
    pub attempt_budget: u32,
}

impl CompletionRequest {
    pub fn new(prompt: Prompt) -> Self {
        CompletionRequest {
            prompt,
            schema_hint: SchemaHint::default(),
            decode_params: BTreeMap::new(),
            attempt_budget: 1,
        }
    }

    pub fn with_attempts(mut self, attempt_budget: u32) -> Self {
        self.attempt_budget = attempt_budget;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("transport failure: {0}")]
pub struct TransportError(pub String);

/// A source of raw completions.
pub trait Backend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<String, TransportError>;

    /// Short tag recorded with every query.
    fn tag(&self) -> String;
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<String, TransportError> {
        (**self).complete(request)
    }

    fn tag(&self) -> String {
        (**self).tag()
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<String, TransportError> {
        (**self).complete(request)
    }

    fn tag(&self) -> String {
        (**self).tag()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FailureCause {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("unparseable reply: {0}")]
    Parse(#[from] ParseError),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GenerateError {
    #[error("attempt budget must be >= 1")]
    ZeroBudget,
    #[error("generation failed after {attempts} attempt(s): {cause}")]
    Exhausted { attempts: u32, cause: FailureCause },
}

impl GenerateError {
    pub fn cause(&self) -> Option<&FailureCause> {
        match self {
            GenerateError::Exhausted { cause, .. } => Some(cause),
            GenerateError::ZeroBudget => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Generation {
    pub raw: String,
    pub parsed: ParsedResponse,
    pub attempts: u32,
}

/// Retries transport failures and unparseable replies up to the request's
/// attempt budget, and bounds concurrent in-flight generations.
pub struct Gateway<B> {
    backend: B,
    in_flight: Semaphore,
}

impl<B: Backend> Gateway<B> {
    pub fn new(backend: B, max_in_flight: usize) -> Self {
        Gateway {
            backend,
            in_flight: Semaphore::new(max_in_flight),
        }
    }

    pub fn backend(&self) -> &B {
        &self.backend
    }

    pub fn generate(&self, request: &CompletionRequest) -> Result<Generation, GenerateError> {
        if request.attempt_budget == 0 {
            return Err(GenerateError::ZeroBudget);
        }
        let mut last = None;
        for attempt in 1..=request.attempt_budget {
            let reply = {
                let _permit = self.in_flight.acquire();
                self.backend.complete(request)
            };
            match reply {
                Ok(raw) => match parse_response(&raw) {
                    Ok(parsed) => {
                        return Ok(Generation {
                            raw,
                            parsed,
                            attempts: attempt,
                        })
                    }
                    Err(e) => last = Some(FailureCause::Parse(e)),
                },
                Err(e) => last = Some(FailureCause::Transport(e)),
            }
        }
        Err(GenerateError::Exhausted {
            attempts: request.attempt_budget,
            cause: last.expect("at least one attempt ran"),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use retcon_core::{build_zero_shot, render_response_block, CefrLevel, Conversation, PromptTemplateSet};

    fn request() -> CompletionRequest {
        let prompt = build_zero_shot(
            &PromptTemplateSet::default(),
            &Conversation::empty("x").unwrap(),
            CefrLevel::B1,
        )
        .unwrap();
        CompletionRequest::new(prompt)
    }

    #[test]
    fn scripted_reply_passes_through() {
        let reply = render_response_block(CefrLevel::B1, "Hello there.");
        let gw = Gateway::new(MockBackend::scripted([reply.clone()]), 1);
        let g = gw.generate(&request()).unwrap();
        assert_eq!(g.raw, reply);
        assert_eq!(g.attempts, 1);
    }

    #[test]
    fn empty_queue_is_transport_failure() {
        let gw = Gateway::new(MockBackend::scripted(Vec::<String>::new()), 1);
        let err = gw.generate(&request()).unwrap_err();
        assert!(matches!(err.cause(), Some(FailureCause::Transport(_))));
    }

    #[test]
    fn retries_past_parse_failure_without_duplicating() {
        let good = render_response_block(CefrLevel::A2, "Yes.");
        let gw = Gateway::new(
            MockBackend::scripted(["nonsense".to_owned(), good.clone(), good.clone()]),
            1,
        );
        let g = gw.generate(&request().with_attempts(3)).unwrap();
        assert_eq!((g.raw.as_str(), g.attempts), (good.as_str(), 2));
        // the third reply is still queued
        assert_eq!(gw.generate(&request()).unwrap().raw, good);
    }

    #[test]
    fn exhausted_budget_reports_last_cause() {
        let gw = Gateway::new(MockBackend::scripted(["{}".to_owned()]), 1);
        let err = gw.generate(&request().with_attempts(2)).unwrap_err();
        assert_eq!(
            err,
            GenerateError::Exhausted {
                attempts: 2,
                cause: FailureCause::Transport(TransportError("scripted reply queue is empty".into())),
            }
        );
        let gw = Gateway::new(MockBackend::scripted(["{}".to_owned()]), 1);
        let err = gw.generate(&request()).unwrap_err();
        assert!(matches!(err.cause(), Some(FailureCause::Parse(ParseError::MissingField(_)))));
        assert_eq!(
            Gateway::new(MockBackend::scripted(["{}".to_owned()]), 1)
                .generate(&request().with_attempts(0)),
            Err(GenerateError::ZeroBudget)
        );
    }
}
