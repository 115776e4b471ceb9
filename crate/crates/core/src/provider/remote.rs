//! Client for chat-completion endpoints that speak the OpenAI wire format.

use std::time::Duration;

use serde_json::{json, Value};

use super::{Completion, GenerationError, GenerationRequest, Provider};
use crate::net::{self, HttpError};

pub struct OpenAiCompatible {
    name: String,
    endpoint: String,
    auth_env: Option<String>,
    timeout: Duration,
}

impl OpenAiCompatible {
    pub fn new(name: &str, endpoint: String, auth_env: Option<String>, timeout: Duration) -> Self {
        Self {
            name: name.to_string(),
            endpoint,
            auth_env,
            timeout,
        }
    }

    fn token(&self) -> Result<Option<String>, GenerationError> {
        match &self.auth_env {
            None => Ok(None),
            Some(var) => match std::env::var(var) {
                Ok(v) if !v.is_empty() => Ok(Some(v)),
                _ => Err(GenerationError::AuthMissing(var.clone())),
            },
        }
    }
}

impl Provider for OpenAiCompatible {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, request: &GenerationRequest) -> Result<Completion, GenerationError> {
        let token = self.token()?;
        let body = json!({
            "model": request.model,
            "messages": [{"role": "user", "content": request.prompt.text}],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        });
        let resp = net::post_json(&self.endpoint, token.as_deref(), &body, self.timeout).map_err(classify)?;
        decode(&resp)
    }
}

fn classify(e: HttpError) -> GenerationError {
    match e {
        HttpError::Status { code: 429, body } | HttpError::Status { code: 503, body } => {
            GenerationError::RateLimited(body)
        }
        HttpError::Status { code: 408, body } | HttpError::Status { code: 504, body } => GenerationError::Timeout(body),
        HttpError::Timeout(m) => GenerationError::Timeout(m),
        other => GenerationError::Provider(other.to_string()),
    }
}

fn decode(resp: &Value) -> Result<Completion, GenerationError> {
    let choice = resp
        .pointer("/choices/0")
        .ok_or_else(|| GenerationError::Provider("response has no choices".into()))?;
    if choice.get("finish_reason").and_then(Value::as_str) == Some("content_filter") {
        return Err(GenerationError::SafetyRefusal("finish_reason=content_filter".into()));
    }
    let text = choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| GenerationError::Provider("choice has no message content".into()))?;
    let usage = |key: &str| {
        resp.pointer(&format!("/usage/{key}"))
            .and_then(Value::as_u64)
            .unwrap_or(0)
    };
    Ok(Completion {
        text: text.to_string(),
        prompt_tokens: usage("prompt_tokens"),
        output_tokens: usage("completion_tokens"),
        created_at: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decodes_choices() {
        let c = decode(&json!({
            "choices": [{"message": {"content": "hi"}, "finish_reason": "stop"}],
            "usage": {"prompt_tokens": 3, "completion_tokens": 1}
        }))
        .unwrap();
        assert_eq!(c.text, "hi");
        assert_eq!((c.prompt_tokens, c.output_tokens), (3, 1));
        assert!(matches!(
            decode(&json!({"choices": [{"message": {"content": ""}, "finish_reason": "content_filter"}]})),
            Err(GenerationError::SafetyRefusal(_))
        ));
        assert!(decode(&json!({})).is_err());
    }

    #[test]
    fn status_classification() {
        let s = |code| HttpError::Status {
            code,
            body: String::new(),
        };
        assert!(classify(s(429)).is_retryable());
        assert!(classify(s(504)).is_retryable());
        assert!(!classify(s(401)).is_retryable());
    }
}
