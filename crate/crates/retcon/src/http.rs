//! Blocking JSON-over-HTTP shared by the remote scorer and the LLM adapter.

use std::time::Duration;

use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum HttpFailure {
    Timeout,
    Connection(String),
    Status(u16, String),
    Body(String),
}

pub(crate) fn agent(timeout_ms: u64) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_millis(timeout_ms)))
        .http_status_as_error(false)
        .build()
        .into()
}

fn classify(err: ureq::Error) -> HttpFailure {
    match err {
        ureq::Error::Timeout(_) => HttpFailure::Timeout,
        ureq::Error::Io(e) if matches!(e.kind(), std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock) => {
            HttpFailure::Timeout
        }
        ureq::Error::Io(e) => HttpFailure::Connection(e.to_string()),
        ureq::Error::HostNotFound => HttpFailure::Connection("host not found".into()),
        ureq::Error::ConnectionFailed => HttpFailure::Connection("connection failed".into()),
        other => HttpFailure::Connection(other.to_string()),
    }
}

fn finish(result: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> Result<Value, HttpFailure> {
    let mut resp = result.map_err(classify)?;
    let status = resp.status().as_u16();
    let body = resp.body_mut().read_to_string().map_err(|e| match classify(e) {
        HttpFailure::Connection(m) => HttpFailure::Body(m),
        other => other,
    })?;
    if !(200..300).contains(&status) {
        return Err(HttpFailure::Status(status, body));
    }
    serde_json::from_str(&body).map_err(|e| HttpFailure::Body(e.to_string()))
}

pub(crate) fn post_json(
    agent: &ureq::Agent,
    url: &str,
    headers: &[(&str, &str)],
    body: &Value,
) -> Result<Value, HttpFailure> {
    let mut req = agent.post(url);
    for (name, value) in headers {
        req = req.header(*name, *value);
    }
    finish(req.send_json(body))
}

pub(crate) fn get_json(agent: &ureq::Agent, url: &str) -> Result<Value, HttpFailure> {
    finish(agent.get(url).call())
}
