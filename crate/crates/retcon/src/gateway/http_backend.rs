//! Adapter for chat-completion style HTTP APIs.
//!
//! Request body:
//!
//! ```json
//! {"model": "<model>", "messages": [{"role": "user", "content": "<prompt>"}],
//!  "response_format": {"type": "json_object"}, ...decode params}
//! ```
//!
//! The reply text is read from `choices[0].message.content`.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use url::Url;

use super::{Backend, CompletionRequest, TransportError};
use crate::http::{self, HttpFailure};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpBackendConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API token.
    #[serde(default)]
    pub auth_token_env: Option<String>,
    #[serde(default = "default_auth_header")]
    pub auth_header: String,
    /// Prefix placed before the token in the header value; may be empty.
    #[serde(default = "default_auth_scheme")]
    pub auth_scheme: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_auth_header() -> String {
    "Authorization".into()
}

fn default_auth_scheme() -> String {
    "Bearer".into()
}

fn default_timeout_ms() -> u64 {
    60_000
}

#[derive(Debug, thiserror::Error)]
pub enum HttpConfigError {
    #[error("invalid LLM endpoint `{0}`")]
    Endpoint(String),
    #[error("environment variable `{0}` is not set")]
    MissingToken(String),
    #[error("LLM timeout must be > 0 ms")]
    ZeroTimeout,
    #[error("malformed HTTP backend config: {0}")]
    Malformed(#[from] serde_json::Error),
}

impl HttpBackendConfig {
    pub fn from_json(document: &str) -> Result<Self, HttpConfigError> {
        Ok(serde_json::from_str(document)?)
    }
}

pub struct HttpBackend {
    url: String,
    model: String,
    agent: ureq::Agent,
    auth: Option<(String, String)>,
}

impl fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpBackend")
            .field("url", &self.url)
            .field("model", &self.model)
            .field("auth", &self.auth.as_ref().map(|(h, _)| (h, "<redacted>")))
            .finish()
    }
}

impl HttpBackend {
    pub fn new(config: &HttpBackendConfig) -> Result<Self, HttpConfigError> {
        let token = match &config.auth_token_env {
            Some(var) => Some(std::env::var(var).map_err(|_| HttpConfigError::MissingToken(var.clone()))?),
            None => None,
        };
        Self::with_token(config, token)
    }

    /// Like [`HttpBackend::new`] with the token supplied directly.
    pub fn with_token(config: &HttpBackendConfig, token: Option<String>) -> Result<Self, HttpConfigError> {
        if config.timeout_ms == 0 {
            return Err(HttpConfigError::ZeroTimeout);
        }
        let url = Url::parse(&config.endpoint)
            .ok()
            .filter(|u| matches!(u.scheme(), "http" | "https") && u.host().is_some())
            .ok_or_else(|| HttpConfigError::Endpoint(config.endpoint.clone()))?;
        let auth = token.map(|t| {
            let value = if config.auth_scheme.is_empty() {
                t
            } else {
                format!("{} {t}", config.auth_scheme)
            };
            (config.auth_header.clone(), value)
        });
        Ok(HttpBackend {
            url: url.to_string(),
            model: config.model.clone(),
            agent: http::agent(config.timeout_ms),
            auth,
        })
    }

    fn body(&self, request: &CompletionRequest) -> Value {
        let mut body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt.text}],
            "response_format": {"type": "json_object"},
        });
        let map = body.as_object_mut().expect("object literal");
        for (k, v) in &request.decode_params {
            map.insert(k.clone(), v.clone());
        }
        body
    }
}

impl Backend for HttpBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, TransportError> {
        let headers: Vec<(&str, &str)> = self
            .auth
            .iter()
            .map(|(h, v)| (h.as_str(), v.as_str()))
            .collect();
        let reply = http::post_json(&self.agent, &self.url, &headers, &self.body(request)).map_err(|f| {
            TransportError(match f {
                HttpFailure::Timeout => "request timed out".into(),
                HttpFailure::Connection(m) => format!("connection failed: {m}"),
                HttpFailure::Status(code, _) => format!("HTTP status {code}"),
                HttpFailure::Body(m) => format!("unreadable reply body: {m}"),
            })
        })?;
        reply
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| TransportError("reply has no choices[0].message.content".into()))
    }

    fn tag(&self) -> String {
        format!("http:{}", self.model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> HttpBackendConfig {
        HttpBackendConfig::from_json(r#"{"endpoint": "http://127.0.0.1:9/v1/chat/completions", "model": "m"}"#).unwrap()
    }

    #[test]
    fn debug_output_hides_token() {
        let b = HttpBackend::with_token(&config(), Some("s3cret-token".into())).unwrap();
        let shown = format!("{b:?}");
        assert!(!shown.contains("s3cret"), "{shown}");
        assert!(shown.contains("Authorization"));
    }

    #[test]
    fn config_errors() {
        let mut c = config();
        c.auth_token_env = Some("RETCON_TEST_SURELY_UNSET_VAR".into());
        assert!(matches!(HttpBackend::new(&c), Err(HttpConfigError::MissingToken(_))));
        let mut c = config();
        c.endpoint = "nope".into();
        assert!(matches!(HttpBackend::new(&c), Err(HttpConfigError::Endpoint(_))));
        let mut c = config();
        c.timeout_ms = 0;
        assert!(matches!(HttpBackend::new(&c), Err(HttpConfigError::ZeroTimeout)));
    }
}
