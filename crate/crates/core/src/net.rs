//! The crate's only path to the network.
//!
//! Every outbound request goes through [`post_json`], which counts calls so
//! offline runs can assert that nothing left the process.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde_json::Value;

static REQUESTS: AtomicU64 = AtomicU64::new(0);

/// Number of HTTP requests attempted by this process so far.
pub fn requests_issued() -> u64 {
    REQUESTS.load(Ordering::SeqCst)
}

#[derive(Debug)]
pub enum HttpError {
    Status { code: u16, body: String },
    Timeout(String),
    Transport(String),
    Decode(String),
}

impl std::fmt::Display for HttpError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HttpError::Status { code, body } => write!(f, "HTTP {code}: {body}"),
            HttpError::Timeout(m) => write!(f, "timeout: {m}"),
            HttpError::Transport(m) => write!(f, "transport: {m}"),
            HttpError::Decode(m) => write!(f, "decode: {m}"),
        }
    }
}

impl std::error::Error for HttpError {}

pub fn post_json(url: &str, bearer: Option<&str>, body: &Value, timeout: Duration) -> Result<Value, HttpError> {
    REQUESTS.fetch_add(1, Ordering::SeqCst);
    let agent = ureq::AgentBuilder::new().timeout(timeout).build();
    let mut req = agent.post(url).set("Content-Type", "application/json");
    if let Some(token) = bearer {
        req = req.set("Authorization", &format!("Bearer {token}"));
    }
    match req.send_string(&body.to_string()) {
        Ok(resp) => {
            let text = resp.into_string().map_err(|e| HttpError::Decode(e.to_string()))?;
            serde_json::from_str(&text).map_err(|e| HttpError::Decode(e.to_string()))
        }
        Err(ureq::Error::Status(code, resp)) => Err(HttpError::Status {
            code,
            body: resp.into_string().unwrap_or_default(),
        }),
        Err(ureq::Error::Transport(t)) => {
            let msg = t.to_string();
            if matches!(t.kind(), ureq::ErrorKind::Io) && msg.to_lowercase().contains("timed out") {
                Err(HttpError::Timeout(msg))
            } else {
                Err(HttpError::Transport(msg))
            }
        }
    }
}
