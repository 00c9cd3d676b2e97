//! Uniform chat-completion access to models, with retries, rate limiting and a
//! content-addressed response cache.

mod backend;
mod cache;
mod clock;

use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::prompt::Prompt;

pub use backend::{
    ground_truth_marker, parse_response, request_body, BackendError, ChatBackend, ChatRequest,
    HttpBackend, MockModel, API_KEY_ENV,
};
pub use cache::{text_checksum, CacheEntry, CacheError, ResponseCache};
pub use clock::{Clock, RateLimiter, SystemClock, VirtualClock, RATE_WINDOW};

/// SHA-256 identifying one model request.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PromptHash(pub [u8; 32]);

impl PromptHash {
    /// Hash of the fields that determine a response: model, prompt text,
    /// temperature and output limit. Each field is length-prefixed.
    pub fn compute(
        model_id: &str,
        rendered: &str,
        temperature: f64,
        max_output_tokens: usize,
    ) -> Self {
        let mut h = Sha256::new();
        for part in [model_id.as_bytes(), rendered.as_bytes()] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part);
        }
        h.update(temperature.to_bits().to_le_bytes());
        h.update((max_output_tokens as u64).to_le_bytes());
        PromptHash(h.finalize().into())
    }

    pub fn of_bytes(bytes: &[u8]) -> Self {
        PromptHash(Sha256::digest(bytes).into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out).ok()?;
        Some(PromptHash(out))
    }
}

impl fmt::Display for PromptHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for PromptHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PromptHash({})", &self.to_hex()[..12])
    }
}

impl Serialize for PromptHash {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for PromptHash {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        PromptHash::from_hex(&s).ok_or_else(|| serde::de::Error::custom("invalid prompt hash"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    Http(String),
    Mock(MockModel),
}

impl Endpoint {
    /// `mock:<name>` selects a built-in mock; anything starting with
    /// `http://` or `https://` is a chat-completion URL.
    pub fn parse(s: &str) -> Result<Self, String> {
        if let Some(name) = s.strip_prefix("mock:") {
            return MockModel::from_name(name)
                .map(Endpoint::Mock)
                .ok_or_else(|| format!("unknown mock model `{name}`"));
        }
        if s.starts_with("http://") || s.starts_with("https://") {
            return Ok(Endpoint::Http(s.to_string()));
        }
        Err(format!(
            "endpoint `{s}` is neither mock:<name> nor an http(s) URL"
        ))
    }
}

mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        Duration::try_from_secs_f64(v).map_err(serde::de::Error::custom)
    }
}

fn default_temperature() -> f64 {
    0.0
}
fn default_max_output_tokens() -> usize {
    256
}
fn default_timeout() -> Duration {
    Duration::from_secs(60)
}
fn default_max_retries() -> u32 {
    3
}
fn default_rpm() -> usize {
    60
}
fn default_context_tokens() -> usize {
    2048
}
fn default_chars_per_token() -> f64 {
    4.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub model_id: String,
    /// Chat-completion URL or `mock:<name>`.
    pub endpoint_url: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_output_tokens")]
    pub max_output_tokens: usize,
    #[serde(default = "default_timeout", with = "secs", rename = "timeout_secs")]
    pub timeout: Duration,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_rpm")]
    pub requests_per_minute: usize,
    /// Model context window, used to size the prompt budget.
    #[serde(default = "default_context_tokens")]
    pub context_tokens: usize,
    #[serde(default = "default_chars_per_token")]
    pub chars_per_token: f64,
}

impl ModelConfig {
    pub fn new(model_id: impl Into<String>, endpoint_url: impl Into<String>) -> Self {
        ModelConfig {
            model_id: model_id.into(),
            endpoint_url: endpoint_url.into(),
            temperature: default_temperature(),
            max_output_tokens: default_max_output_tokens(),
            timeout: default_timeout(),
            max_retries: default_max_retries(),
            requests_per_minute: default_rpm(),
            context_tokens: default_context_tokens(),
            chars_per_token: default_chars_per_token(),
        }
    }

    pub fn mock(model_id: impl Into<String>, mock: MockModel) -> Self {
        Self::new(model_id, format!("mock:{}", mock.name()))
    }

    pub fn endpoint(&self) -> Result<Endpoint, String> {
        Endpoint::parse(&self.endpoint_url)
    }

    pub fn char_budget(&self) -> usize {
        crate::prompt::char_budget(
            self.context_tokens,
            self.max_output_tokens,
            self.chars_per_token,
        )
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.model_id.trim().is_empty() {
            return Err("model_id is empty".into());
        }
        self.endpoint()?;
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            ));
        }
        if self.max_output_tokens == 0 {
            return Err("max_output_tokens must be > 0".into());
        }
        if self.requests_per_minute == 0 {
            return Err("requests_per_minute must be > 0".into());
        }
        if self.timeout.is_zero() {
            return Err("timeout_secs must be > 0".into());
        }
        if !(self.chars_per_token > 0.0 && self.chars_per_token.is_finite()) {
            return Err("chars_per_token must be > 0".into());
        }
        if self.context_tokens <= self.max_output_tokens {
            return Err("context_tokens must exceed max_output_tokens".into());
        }
        Ok(())
    }

    pub fn prompt_hash(&self, rendered: &str) -> PromptHash {
        PromptHash::compute(
            &self.model_id,
            rendered,
            self.temperature,
            self.max_output_tokens,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelAnswer {
    pub text: String,
    pub model_id: String,
    pub prompt_hash: PromptHash,
    pub latency: Duration,
    pub from_cache: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("endpoint unreachable after {attempts} attempt(s) [{prompt_hash}]: {message}")]
    Unreachable {
        prompt_hash: PromptHash,
        attempts: u32,
        message: String,
    },
    #[error("malformed response [{prompt_hash}]: {message}")]
    MalformedResponse {
        prompt_hash: PromptHash,
        message: String,
    },
    #[error("timed out after {attempts} attempt(s) [{prompt_hash}]")]
    Timeout {
        prompt_hash: PromptHash,
        attempts: u32,
    },
    #[error("response cache [{prompt_hash}]: {source}")]
    Cache {
        prompt_hash: PromptHash,
        source: CacheError,
    },
    #[error("invalid model config: {0}")]
    Config(String),
}

impl GatewayError {
    pub fn prompt_hash(&self) -> Option<PromptHash> {
        match self {
            GatewayError::Unreachable { prompt_hash, .. }
            | GatewayError::MalformedResponse { prompt_hash, .. }
            | GatewayError::Timeout { prompt_hash, .. }
            | GatewayError::Cache { prompt_hash, .. } => Some(*prompt_hash),
            GatewayError::Config(_) => None,
        }
    }
}

/// Exponential backoff: `base × 2^attempt`, capped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Backoff {
    pub base: Duration,
    pub cap: Duration,
}

impl Default for Backoff {
    fn default() -> Self {
        Backoff {
            base: Duration::from_millis(500),
            cap: Duration::from_secs(30),
        }
    }
}

impl Backoff {
    pub fn delay(&self, attempt: u32) -> Duration {
        self.base
            .saturating_mul(1u32.checked_shl(attempt).unwrap_or(u32::MAX))
            .min(self.cap)
    }
}

/// One model behind its retry policy and rate limiter. Safe to share across threads.
pub struct Gateway {
    cfg: ModelConfig,
    backend: Arc<dyn ChatBackend>,
    limiter: RateLimiter,
    clock: Arc<dyn Clock>,
    backoff: Backoff,
}

impl Gateway {
    pub fn new(cfg: ModelConfig) -> Result<Self, GatewayError> {
        cfg.validate().map_err(GatewayError::Config)?;
        let backend: Arc<dyn ChatBackend> = match cfg.endpoint().map_err(GatewayError::Config)? {
            Endpoint::Mock(m) => Arc::new(m),
            Endpoint::Http(url) => Arc::new(
                HttpBackend::new(&url, cfg.timeout)
                    .map_err(|e| GatewayError::Config(e.to_string()))?,
            ),
        };
        Ok(Self::with_backend(
            cfg,
            backend,
            Arc::new(SystemClock::default()),
        ))
    }

    /// Gateway over an arbitrary backend and clock.
    pub fn with_backend(
        cfg: ModelConfig,
        backend: Arc<dyn ChatBackend>,
        clock: Arc<dyn Clock>,
    ) -> Self {
        let limiter = RateLimiter::new(cfg.requests_per_minute.max(1), clock.clone());
        Gateway {
            cfg,
            backend,
            limiter,
            clock,
            backoff: Backoff::default(),
        }
    }

    pub fn with_backoff(mut self, backoff: Backoff) -> Self {
        self.backoff = backoff;
        self
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Sends the prompt, retrying transient failures and timeouts up to
    /// `max_retries` times.
    pub fn complete(&self, prompt: &Prompt) -> Result<ModelAnswer, GatewayError> {
        let prompt_hash = self.cfg.prompt_hash(&prompt.rendered);
        let req = ChatRequest {
            model_id: &self.cfg.model_id,
            prompt: &prompt.rendered,
            temperature: self.cfg.temperature,
            max_output_tokens: self.cfg.max_output_tokens,
        };
        let mut attempt = 0u32;
        loop {
            self.limiter.acquire();
            let started = self.clock.now();
            let result = self.backend.chat(&req);
            let latency = if self.backend.measures_latency() {
                self.clock.now().saturating_sub(started)
            } else {
                Duration::ZERO
            };
            let failure = match result {
                Ok(text) => {
                    return Ok(ModelAnswer {
                        text,
                        model_id: self.cfg.model_id.clone(),
                        prompt_hash,
                        latency,
                        from_cache: false,
                    })
                }
                Err(BackendError::Malformed(message)) => {
                    return Err(GatewayError::MalformedResponse {
                        prompt_hash,
                        message,
                    })
                }
                Err(BackendError::Fatal(message)) => {
                    return Err(GatewayError::Unreachable {
                        prompt_hash,
                        attempts: attempt + 1,
                        message,
                    })
                }
                Err(e) => e,
            };
            if attempt >= self.cfg.max_retries {
                return Err(match failure {
                    BackendError::Timeout => GatewayError::Timeout {
                        prompt_hash,
                        attempts: attempt + 1,
                    },
                    other => GatewayError::Unreachable {
                        prompt_hash,
                        attempts: attempt + 1,
                        message: other.to_string(),
                    },
                });
            }
            self.clock.sleep(self.backoff.delay(attempt));
            attempt += 1;
        }
    }

    /// Cache-first completion. Hits report zero latency.
    pub fn cached_complete(
        &self,
        prompt: &Prompt,
        cache: &ResponseCache,
    ) -> Result<ModelAnswer, GatewayError> {
        let prompt_hash = self.cfg.prompt_hash(&prompt.rendered);
        let cache_err = |source| GatewayError::Cache {
            prompt_hash,
            source,
        };
        if let Some(entry) = cache.get(&prompt_hash).map_err(cache_err)? {
            return Ok(ModelAnswer {
                text: entry.text,
                model_id: self.cfg.model_id.clone(),
                prompt_hash,
                latency: Duration::ZERO,
                from_cache: true,
            });
        }
        let answer = self.complete(prompt)?;
        cache
            .put(&CacheEntry::new(
                prompt_hash,
                &answer.model_id,
                &answer.text,
            ))
            .map_err(cache_err)?;
        Ok(answer)
    }
}
