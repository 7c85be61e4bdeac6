use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{ChatBackend, ChatMessage, CompletionParams, Conversation, LlmError};

pub const DEFAULT_API_KEY_ENV: &str = "OPENAI_API_KEY";

/// Exponential backoff for transport failures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            initial_backoff_ms: 500,
            max_backoff_ms: 8_000,
            multiplier: 2.0,
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        Self {
            max_retries: 0,
            ..Self::default()
        }
    }

    /// Delay before retry number `retry` (0-based).
    pub fn backoff(&self, retry: u32) -> Duration {
        let ms = self.initial_backoff_ms as f64 * self.multiplier.powi(retry as i32);
        Duration::from_millis(ms.min(self.max_backoff_ms as f64) as u64)
    }
}

/// Runs `call` until it succeeds, fails with a non-retryable error, or the
/// policy's retry budget is spent. `call` receives the 0-based attempt number.
pub fn with_retry<T, F>(policy: &RetryPolicy, mut call: F) -> Result<T, LlmError>
where
    F: FnMut(u32) -> Result<T, LlmError>,
{
    let mut attempt = 0;
    loop {
        match call(attempt) {
            Err(e) if e.is_retryable() && attempt < policy.max_retries => {
                let wait = policy.backoff(attempt);
                log::warn!("retrying after {wait:?}: {e}");
                std::thread::sleep(wait);
                attempt += 1;
            }
            other => return other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    pub model: String,
    pub api_key_env: String,
    pub retry: RetryPolicy,
    pub timeout_secs: u64,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4".into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            retry: RetryPolicy::default(),
            timeout_secs: 60,
        }
    }
}

/// OpenAI-compatible chat-completions client.
#[derive(Debug)]
pub struct HttpBackend {
    client: Client,
    config: HttpConfig,
    api_key: String,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    content: Option<String>,
}

impl HttpBackend {
    /// Reads the API key from the environment variable named in `config`.
    pub fn from_env(config: HttpConfig) -> Result<Self, LlmError> {
        let key = std::env::var(&config.api_key_env)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| {
                LlmError::Config(format!(
                    "environment variable {} is not set",
                    config.api_key_env
                ))
            })?;
        Self::with_api_key(config, key)
    }

    pub fn with_api_key(config: HttpConfig, api_key: impl Into<String>) -> Result<Self, LlmError> {
        let client = Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| LlmError::Config(e.to_string()))?;
        Ok(Self {
            client,
            config,
            api_key: api_key.into(),
        })
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }

    fn send_once(&self, conversation: &Conversation, params: &CompletionParams) -> Result<String, LlmError> {
        let body = ChatRequest {
            model: &self.config.model,
            messages: conversation.messages(),
            temperature: params.temperature(),
            max_tokens: params.max_output_tokens(),
            seed: params.seed(),
        };
        let response = self
            .client
            .post(&self.config.endpoint)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        let status = response.status();
        let text = response
            .text()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(classify_failure(status, &text));
        }
        let parsed: ChatResponse = serde_json::from_str(&text)
            .map_err(|e| LlmError::Transport(format!("malformed response body: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| LlmError::Transport("response carried no message content".into()))
    }
}

fn classify_failure(status: StatusCode, body: &str) -> LlmError {
    let detail = serde_json::from_str::<Value>(body).ok();
    let code = detail
        .as_ref()
        .and_then(|v| v.pointer("/error/code"))
        .and_then(Value::as_str)
        .unwrap_or_default();
    let message = detail
        .as_ref()
        .and_then(|v| v.pointer("/error/message"))
        .and_then(Value::as_str)
        .map(str::to_string)
        .unwrap_or_else(|| body.chars().take(200).collect());
    let summary = format!("HTTP {}: {message}", status.as_u16());
    if code == "context_length_exceeded" {
        LlmError::PromptTooLong(summary)
    } else if status == StatusCode::TOO_MANY_REQUESTS
        || status == StatusCode::REQUEST_TIMEOUT
        || status == StatusCode::CONFLICT
        || status.is_server_error()
    {
        LlmError::Transport(summary)
    } else {
        LlmError::BackendRefusal(summary)
    }
}

impl ChatBackend for HttpBackend {
    fn name(&self) -> &str {
        &self.config.model
    }

    fn complete(&self, conversation: &Conversation, params: &CompletionParams) -> Result<String, LlmError> {
        with_retry(&self.config.retry, |_| self.send_once(conversation, params))
    }
}
