use std::time::Duration;

use serde_json::{json, Value};

/// Failure of a single attempt, before retry policy is applied.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    /// Worth retrying: connection failures, 429s, 5xx.
    #[error("transient: {0}")]
    Transient(String),
    #[error("request timed out")]
    Timeout,
    #[error("malformed response: {0}")]
    Malformed(String),
    /// Not worth retrying, e.g. 401 or 404.
    #[error("rejected: {0}")]
    Fatal(String),
}

/// Request fields a backend may forward to the model.
#[derive(Debug, Clone, Copy)]
pub struct ChatRequest<'a> {
    pub model_id: &'a str,
    pub prompt: &'a str,
    pub temperature: f64,
    pub max_output_tokens: usize,
}

pub trait ChatBackend: Send + Sync {
    fn chat(&self, req: &ChatRequest<'_>) -> Result<String, BackendError>;

    /// Whether wall-clock latency means anything for this backend. Mocks answer
    /// instantly and report zero so their run logs stay byte-stable.
    fn measures_latency(&self) -> bool {
        true
    }
}

/// Offline stand-ins for real models.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MockModel {
    /// Finds a `[GT:...]` marker in the prompt and answers `The answer is ....`
    EchoAnswer,
    /// Always answers with the empty string.
    Silent,
    /// Repeats the question back.
    Parrot,
}

impl MockModel {
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "echo-answer" => Some(MockModel::EchoAnswer),
            "silent" => Some(MockModel::Silent),
            "parrot" => Some(MockModel::Parrot),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MockModel::EchoAnswer => "echo-answer",
            MockModel::Silent => "silent",
            MockModel::Parrot => "parrot",
        }
    }

    pub fn respond(self, prompt: &str) -> String {
        match self {
            MockModel::EchoAnswer => match ground_truth_marker(prompt) {
                Some(answer) => format!("The answer is {answer}."),
                None => "I cannot find the answer in the image.".to_string(),
            },
            MockModel::Silent => String::new(),
            MockModel::Parrot => question_of(prompt).unwrap_or(prompt).to_string(),
        }
    }
}

impl ChatBackend for MockModel {
    fn chat(&self, req: &ChatRequest<'_>) -> Result<String, BackendError> {
        Ok(self.respond(req.prompt))
    }

    fn measures_latency(&self) -> bool {
        false
    }
}

/// Content of the first `[GT:...]` marker.
pub fn ground_truth_marker(prompt: &str) -> Option<&str> {
    let start = prompt.find("[GT:")? + 4;
    let len = prompt[start..].find(']')?;
    Some(&prompt[start..start + len])
}

fn question_of(prompt: &str) -> Option<&str> {
    const LEAD: &str = "Please answer the question ";
    const TRAIL: &str = " following the examples";
    let start = prompt.rfind(LEAD)? + LEAD.len();
    let len = prompt[start..].find(TRAIL)?;
    Some(&prompt[start..start + len])
}

/// Chat-completion endpoint speaking the common JSON protocol:
/// `POST {model, messages: [{role: "user", content}], temperature, max_tokens}`.
pub struct HttpBackend {
    url: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

/// Bearer token for HTTP endpoints.
pub const API_KEY_ENV: &str = "MODEL_API_KEY";

impl HttpBackend {
    pub fn new(url: &str, timeout: Duration) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::Fatal(e.to_string()))?;
        Ok(HttpBackend {
            url: url.to_string(),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            client,
        })
    }

    /// Overrides the bearer token read from the environment.
    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }
}

pub fn request_body(req: &ChatRequest<'_>) -> Value {
    json!({
        "model": req.model_id,
        "messages": [{"role": "user", "content": req.prompt}],
        "temperature": req.temperature,
        "max_tokens": req.max_output_tokens,
    })
}

/// Text of `choices[0].message.content`.
pub fn parse_response(body: &[u8]) -> Result<String, BackendError> {
    let value: Value =
        serde_json::from_slice(body).map_err(|e| BackendError::Malformed(e.to_string()))?;
    value
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| BackendError::Malformed("no choices[0].message.content".into()))
}

impl ChatBackend for HttpBackend {
    fn chat(&self, req: &ChatRequest<'_>) -> Result<String, BackendError> {
        let mut builder = self.client.post(&self.url).json(&request_body(req));
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let resp = builder.send().map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout
            } else {
                BackendError::Transient(e.to_string())
            }
        })?;
        let status = resp.status();
        let body = resp.bytes().map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout
            } else {
                BackendError::Transient(e.to_string())
            }
        })?;
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(BackendError::Transient(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let snippet: String = String::from_utf8_lossy(&body).chars().take(200).collect();
            return Err(BackendError::Fatal(format!("HTTP {status}: {snippet}")));
        }
        parse_response(&body)
    }
}
