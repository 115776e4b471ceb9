//! Text-generation providers behind a retrying, rate-limited client.

pub mod clock;
pub mod mock;
pub mod rate;
pub mod remote;

use std::path::Path;
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use xxhash_rust::xxh3::xxh3_64;

use crate::seed;
use crate::template::InstantiatedPrompt;

pub use clock::{Clock, SystemClock, VirtualClock};
pub use mock::{mock_respond, CollapseModel, MockConfig, MockProvider, PromptKind};
pub use rate::RateLimiter;
pub use remote::OpenAiCompatible;

pub const DEFAULT_TEMPERATURE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GenerationError {
    #[error("rate limited: {0}")]
    RateLimited(String),
    #[error("timed out: {0}")]
    Timeout(String),
    #[error("refused by safety filter: {0}")]
    SafetyRefusal(String),
    #[error("provider error: {0}")]
    Provider(String),
    #[error("credential variable `{0}` is not set")]
    AuthMissing(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl GenerationError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, GenerationError::RateLimited(_) | GenerationError::Timeout(_))
    }

    pub fn kind(&self) -> &'static str {
        match self {
            GenerationError::RateLimited(_) => "rate_limited",
            GenerationError::Timeout(_) => "timeout",
            GenerationError::SafetyRefusal(_) => "safety_refusal",
            GenerationError::Provider(_) => "provider_error",
            GenerationError::AuthMissing(_) => "auth_missing",
            GenerationError::InvalidRequest(_) => "invalid_request",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub request_id: String,
    pub prompt: InstantiatedPrompt,
    pub model: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl GenerationRequest {
    pub fn new(
        request_id: impl Into<String>,
        prompt: InstantiatedPrompt,
        model: impl Into<String>,
        temperature: f64,
        max_output_tokens: u32,
    ) -> Result<Self, GenerationError> {
        if !(temperature.is_finite() && temperature >= 0.0) {
            return Err(GenerationError::InvalidRequest(format!(
                "temperature must be >= 0, got {temperature}"
            )));
        }
        if max_output_tokens == 0 {
            return Err(GenerationError::InvalidRequest("max_output_tokens must be >= 1".into()));
        }
        Ok(Self {
            request_id: request_id.into(),
            prompt,
            model: model.into(),
            temperature,
            max_output_tokens,
        })
    }
}

/// What a provider returns for one call, before client bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub prompt_tokens: u64,
    pub output_tokens: u64,
    /// RFC 3339 timestamp; the client stamps wall time when absent.
    pub created_at: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawCompletion {
    pub request_id: String,
    pub text: String,
    pub provider: String,
    pub prompt_tokens: u64,
    pub output_tokens: u64,
    pub latency_ms: u64,
    pub created_at: String,
}

pub trait Provider: Send + Sync {
    fn name(&self) -> &str;

    /// Performs one attempt. Retrying is the client's job.
    fn complete(&self, request: &GenerationRequest) -> Result<Completion, GenerationError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_backoff_ms: u64,
    /// Fraction of the backoff randomly added or removed.
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_backoff_ms: 500,
            jitter: 0.2,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (1-based) of `request_id`.
    /// Jitter is seeded from the request id, never from ambient entropy.
    pub fn backoff(&self, request_id: &str, attempt: u32) -> Duration {
        let base = self.base_backoff_ms as f64 * 2f64.powi(attempt.saturating_sub(1) as i32);
        let mut rng = seed::rng(seed::child_seed(xxh3_64(request_id.as_bytes()), attempt as u64));
        let j = self.jitter.clamp(0.0, 1.0);
        let factor = 1.0 + rng.gen_range(-1.0..=1.0) * j;
        Duration::from_secs_f64((base * factor).max(0.0) / 1000.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Mock,
    OpenaiCompatible,
}

/// Provider configuration as stored in a JSON file. Credentials are only
/// ever read from the environment variable named by `auth_env`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub name: String,
    pub kind: ProviderKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_env: Option<String>,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_rps")]
    pub requests_per_second: f64,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_output")]
    pub max_output_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mock: Option<MockConfig>,
}

fn default_model() -> String {
    "mock-collapse".into()
}
fn default_in_flight() -> usize {
    8
}
fn default_rps() -> f64 {
    10.0
}
fn default_timeout_ms() -> u64 {
    120_000
}
fn default_temperature() -> f64 {
    DEFAULT_TEMPERATURE
}
fn default_max_output() -> u32 {
    4096
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Load { path: String, message: String },
    #[error("invalid provider config: {0}")]
    Invalid(String),
}

impl ProviderConfig {
    pub fn mock(seed: u64) -> Self {
        Self {
            name: "mock".into(),
            kind: ProviderKind::Mock,
            endpoint: None,
            auth_env: None,
            model: default_model(),
            max_in_flight: default_in_flight(),
            requests_per_second: 1e6,
            retry: RetryPolicy::default(),
            timeout_ms: default_timeout_ms(),
            temperature: DEFAULT_TEMPERATURE,
            max_output_tokens: default_max_output(),
            mock: Some(MockConfig {
                seed,
                ..MockConfig::default()
            }),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let err = |message: String| ConfigError::Load {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.max_in_flight < 1 {
            return Err(ConfigError::Invalid("max_in_flight must be >= 1".into()));
        }
        if !(self.requests_per_second.is_finite() && self.requests_per_second > 0.0) {
            return Err(ConfigError::Invalid("requests_per_second must be > 0".into()));
        }
        if self.retry.max_attempts < 1 {
            return Err(ConfigError::Invalid("retry.max_attempts must be >= 1".into()));
        }
        if self.kind == ProviderKind::OpenaiCompatible && self.endpoint.is_none() {
            return Err(ConfigError::Invalid("remote provider needs an endpoint".into()));
        }
        if let Some(m) = &self.mock {
            m.collapse.validate().map_err(ConfigError::Invalid)?;
        }
        Ok(())
    }

    pub fn build_provider(&self) -> Arc<dyn Provider> {
        match self.kind {
            ProviderKind::Mock => Arc::new(MockProvider::new(&self.name, self.mock.clone().unwrap_or_default())),
            ProviderKind::OpenaiCompatible => Arc::new(OpenAiCompatible::new(
                &self.name,
                self.endpoint.clone().unwrap_or_default(),
                self.auth_env.clone(),
                Duration::from_millis(self.timeout_ms),
            )),
        }
    }

    pub fn request(
        &self,
        request_id: impl Into<String>,
        prompt: InstantiatedPrompt,
    ) -> Result<GenerationRequest, GenerationError> {
        GenerationRequest::new(
            request_id,
            prompt,
            self.model.clone(),
            self.temperature,
            self.max_output_tokens,
        )
    }
}

/// Retrying, rate-limited client with bounded in-flight requests.
pub struct Client {
    provider: Arc<dyn Provider>,
    retry: RetryPolicy,
    max_in_flight: usize,
    limiter: RateLimiter,
    clock: Arc<dyn Clock>,
}

/// One result of [`Client::generate_batch`], tagged with its request id.
#[derive(Debug, Clone)]
pub struct BatchItem {
    pub request_id: String,
    pub result: Result<RawCompletion, GenerationError>,
}

impl Client {
    pub fn new(provider: Arc<dyn Provider>, config: &ProviderConfig) -> Self {
        Self::with_clock(provider, config, Arc::new(SystemClock::new()))
    }

    pub fn with_clock(provider: Arc<dyn Provider>, config: &ProviderConfig, clock: Arc<dyn Clock>) -> Self {
        Self {
            provider,
            retry: config.retry.clone(),
            max_in_flight: config.max_in_flight.max(1),
            limiter: RateLimiter::new(config.requests_per_second),
            clock,
        }
    }

    pub fn from_config(config: &ProviderConfig) -> Self {
        Self::new(config.build_provider(), config)
    }

    pub fn provider_name(&self) -> &str {
        self.provider.name()
    }

    pub fn clock(&self) -> &dyn Clock {
        self.clock.as_ref()
    }

    /// Runs one request, retrying retryable failures with exponential backoff.
    pub fn generate(&self, request: &GenerationRequest) -> Result<RawCompletion, GenerationError> {
        let mut attempt = 1;
        loop {
            self.limiter.acquire(self.clock.as_ref());
            let started = self.clock.now();
            match self.provider.complete(request) {
                Ok(c) => {
                    let latency = self.clock.now().saturating_sub(started);
                    return Ok(RawCompletion {
                        request_id: request.request_id.clone(),
                        text: c.text,
                        provider: self.provider.name().to_string(),
                        prompt_tokens: c.prompt_tokens,
                        output_tokens: c.output_tokens,
                        latency_ms: latency.as_millis() as u64,
                        created_at: c.created_at.unwrap_or_else(|| {
                            humantime::format_rfc3339_seconds(std::time::SystemTime::now()).to_string()
                        }),
                    });
                }
                Err(e) if e.is_retryable() && attempt < self.retry.max_attempts => {
                    log::debug!("{}: attempt {attempt} failed ({e}); retrying", request.request_id);
                    self.clock.sleep(self.retry.backoff(&request.request_id, attempt));
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    /// Runs every request with at most `max_in_flight` outstanding at once.
    ///
    /// `on_result` is called on the calling thread once per input, in
    /// completion order. Item failures never abort the batch.
    pub fn generate_batch<I, F>(&self, requests: I, mut on_result: F)
    where
        I: IntoIterator<Item = GenerationRequest>,
        I::IntoIter: Send,
        F: FnMut(BatchItem),
    {
        let queue = Mutex::new(requests.into_iter());
        let (tx, rx) = mpsc::channel::<BatchItem>();
        std::thread::scope(|scope| {
            for _ in 0..self.max_in_flight {
                let tx = tx.clone();
                let queue = &queue;
                scope.spawn(move || loop {
                    let next = queue.lock().unwrap().next();
                    let Some(req) = next else { break };
                    let result = self.generate(&req);
                    if tx
                        .send(BatchItem {
                            request_id: req.request_id,
                            result,
                        })
                        .is_err()
                    {
                        break;
                    }
                });
            }
            drop(tx);
            for item in rx {
                on_result(item);
            }
        });
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub output_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub kind: String,
    pub message: String,
}

/// One line of the append-only raw-completion log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRecord {
    pub request_id: String,
    pub template_id: String,
    pub seed: u64,
    pub booster: String,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
    pub provider: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorRecord>,
}

impl RawRecord {
    pub fn new(request: &GenerationRequest, provider: &str, result: &Result<RawCompletion, GenerationError>) -> Self {
        let (text, usage, created_at, error) = match result {
            Ok(c) => (
                Some(c.text.clone()),
                Some(Usage {
                    prompt_tokens: c.prompt_tokens,
                    output_tokens: c.output_tokens,
                }),
                Some(c.created_at.clone()),
                None,
            ),
            Err(e) => (
                None,
                None,
                None,
                Some(ErrorRecord {
                    kind: e.kind().to_string(),
                    message: e.to_string(),
                }),
            ),
        };
        Self {
            request_id: request.request_id.clone(),
            template_id: request.prompt.template_id.clone(),
            seed: request.prompt.seed,
            booster: request.prompt.booster_used.clone(),
            prompt: request.prompt.text.clone(),
            text,
            usage,
            provider: provider.to_string(),
            created_at,
            error,
        }
    }

    pub fn is_error(&self) -> bool {
        self.error.is_some()
    }

    /// The completion view consumed by the parser, when this record succeeded.
    pub fn completion(&self) -> Option<RawCompletion> {
        let text = self.text.clone()?;
        let usage = self.usage.unwrap_or(Usage {
            prompt_tokens: 0,
            output_tokens: 0,
        });
        Some(RawCompletion {
            request_id: self.request_id.clone(),
            text,
            provider: self.provider.clone(),
            prompt_tokens: usage.prompt_tokens,
            output_tokens: usage.output_tokens,
            latency_ms: 0,
            created_at: self.created_at.clone().unwrap_or_default(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    fn prompt(text: &str) -> InstantiatedPrompt {
        InstantiatedPrompt {
            template_id: "t".into(),
            text: text.into(),
            bindings: Default::default(),
            seed: 1,
            booster_used: String::new(),
        }
    }

    struct Flaky {
        failures: AtomicU32,
        calls: AtomicU32,
        error: GenerationError,
    }

    impl Provider for Flaky {
        fn name(&self) -> &str {
            "flaky"
        }

        fn complete(&self, _r: &GenerationRequest) -> Result<Completion, GenerationError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            if self.failures.load(Ordering::SeqCst) > 0 {
                self.failures.fetch_sub(1, Ordering::SeqCst);
                return Err(self.error.clone());
            }
            Ok(Completion {
                text: "ok".into(),
                prompt_tokens: 1,
                output_tokens: 1,
                created_at: Some("1970-01-01T00:00:00Z".into()),
            })
        }
    }

    fn config(max_attempts: u32) -> ProviderConfig {
        let mut c = ProviderConfig::mock(0);
        c.retry.max_attempts = max_attempts;
        c
    }

    #[test]
    fn retries_rate_limits_then_succeeds() {
        let flaky = Arc::new(Flaky {
            failures: AtomicU32::new(2),
            calls: AtomicU32::new(0),
            error: GenerationError::RateLimited("429".into()),
        });
        let client = Client::with_clock(flaky.clone(), &config(3), Arc::new(VirtualClock::new()));
        let req = GenerationRequest::new("r1", prompt("p"), "m", 1.0, 16).unwrap();
        let out = client.generate(&req).unwrap();
        assert_eq!(out.text, "ok");
        assert_eq!(flaky.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn gives_up_after_max_attempts() {
        let flaky = Arc::new(Flaky {
            failures: AtomicU32::new(5),
            calls: AtomicU32::new(0),
            error: GenerationError::Timeout("slow".into()),
        });
        let client = Client::with_clock(flaky.clone(), &config(3), Arc::new(VirtualClock::new()));
        let req = GenerationRequest::new("r1", prompt("p"), "m", 1.0, 16).unwrap();
        assert!(matches!(client.generate(&req), Err(GenerationError::Timeout(_))));
        assert_eq!(flaky.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn terminal_errors_are_not_retried() {
        let flaky = Arc::new(Flaky {
            failures: AtomicU32::new(1),
            calls: AtomicU32::new(0),
            error: GenerationError::SafetyRefusal("blocked".into()),
        });
        let client = Client::with_clock(flaky.clone(), &config(5), Arc::new(VirtualClock::new()));
        let req = GenerationRequest::new("r1", prompt("p"), "m", 1.0, 16).unwrap();
        assert!(matches!(client.generate(&req), Err(GenerationError::SafetyRefusal(_))));
        assert_eq!(flaky.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn backoff_grows_and_is_deterministic() {
        let p = RetryPolicy {
            max_attempts: 4,
            base_backoff_ms: 100,
            jitter: 0.0,
        };
        assert_eq!(p.backoff("x", 1), Duration::from_millis(100));
        assert_eq!(p.backoff("x", 3), Duration::from_millis(400));
        let j = RetryPolicy { jitter: 0.5, ..p };
        assert_eq!(j.backoff("x", 2), j.backoff("x", 2));
        let d = j.backoff("x", 2).as_secs_f64();
        assert!((0.1..=0.3).contains(&d));
    }

    #[test]
    fn request_validation() {
        assert!(GenerationRequest::new("r", prompt("p"), "m", -0.1, 16).is_err());
        assert!(GenerationRequest::new("r", prompt("p"), "m", 0.0, 0).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = ProviderConfig::mock(0);
        c.retry.max_attempts = 0;
        assert!(c.validate().is_err());
        let mut c = ProviderConfig::mock(0);
        c.kind = ProviderKind::OpenaiCompatible;
        assert!(c.validate().is_err());
    }
}
