//! Chat-style LLM backends.
//!
//! Every backend implements [`ChatBackend`]: one call replays a whole
//! [`Conversation`] and returns the reply text. The caller decides whether
//! to append that reply to its conversation.

mod audit;
mod http;
mod stub;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use audit::{AuditedBackend, TranscriptEntry, TranscriptLog};
pub use http::{with_retry, HttpBackend, HttpConfig, RetryPolicy, DEFAULT_API_KEY_ENV};
pub use stub::{RuleBackend, ScriptedStub};

#[derive(Debug, Error)]
pub enum LlmError {
    /// Network or HTTP-level failure. Retryable.
    #[error("transport error: {0}")]
    Transport(String),
    /// The API rejected the request. Never retried.
    #[error("backend refused the request: {0}")]
    BackendRefusal(String),
    #[error("prompt exceeds the backend's context window: {0}")]
    PromptTooLong(String),
    #[error("scripted backend has no replies left")]
    ScriptExhausted,
    #[error("backend misconfigured: {0}")]
    Config(String),
}

impl LlmError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, LlmError::Transport(_))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConversationError {
    #[error("message content must not be empty")]
    EmptyContent,
    #[error("a system message may only appear first")]
    MisplacedSystem,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawMessage")]
pub struct ChatMessage {
    role: Role,
    content: String,
}

#[derive(Deserialize)]
struct RawMessage {
    role: Role,
    content: String,
}

impl TryFrom<RawMessage> for ChatMessage {
    type Error = ConversationError;

    fn try_from(raw: RawMessage) -> Result<Self, Self::Error> {
        ChatMessage::new(raw.role, raw.content)
    }
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Result<Self, ConversationError> {
        let content = content.into();
        if content.trim().is_empty() {
            return Err(ConversationError::EmptyContent);
        }
        Ok(Self { role, content })
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn content(&self) -> &str {
        &self.content
    }
}

/// Ordered role-tagged messages. At most one system message, and only first.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<ChatMessage>", into = "Vec<ChatMessage>")]
pub struct Conversation {
    messages: Vec<ChatMessage>,
}

impl TryFrom<Vec<ChatMessage>> for Conversation {
    type Error = ConversationError;

    fn try_from(messages: Vec<ChatMessage>) -> Result<Self, Self::Error> {
        let mut conversation = Conversation::new();
        for m in messages {
            conversation.push(m)?;
        }
        Ok(conversation)
    }
}

impl From<Conversation> for Vec<ChatMessage> {
    fn from(c: Conversation) -> Self {
        c.messages
    }
}

impl Conversation {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_system(content: impl Into<String>) -> Result<Self, ConversationError> {
        let mut c = Self::new();
        c.push(ChatMessage::new(Role::System, content)?)?;
        Ok(c)
    }

    pub fn push(&mut self, message: ChatMessage) -> Result<(), ConversationError> {
        if message.role == Role::System && !self.messages.is_empty() {
            return Err(ConversationError::MisplacedSystem);
        }
        self.messages.push(message);
        Ok(())
    }

    pub fn push_user(&mut self, content: impl Into<String>) -> Result<(), ConversationError> {
        self.push(ChatMessage::new(Role::User, content)?)
    }

    pub fn push_assistant(&mut self, content: impl Into<String>) -> Result<(), ConversationError> {
        self.push(ChatMessage::new(Role::Assistant, content)?)
    }

    pub fn messages(&self) -> &[ChatMessage] {
        &self.messages
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn last_with_role(&self, role: Role) -> Option<&ChatMessage> {
        self.messages.iter().rev().find(|m| m.role == role)
    }

    /// Total characters across all message contents.
    pub fn char_len(&self) -> usize {
        self.messages.iter().map(|m| m.content.chars().count()).sum()
    }

    /// Whether `needle` occurs in any message.
    pub fn contains(&self, needle: &str) -> bool {
        self.messages.iter().any(|m| m.content.contains(needle))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompletionParams {
    temperature: f64,
    max_output_tokens: u32,
    seed: Option<u64>,
}

impl Default for CompletionParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_output_tokens: 512,
            seed: Some(42),
        }
    }
}

impl CompletionParams {
    pub fn new(temperature: f64, max_output_tokens: u32, seed: Option<u64>) -> Result<Self, LlmError> {
        if !(0.0..=2.0).contains(&temperature) {
            return Err(LlmError::Config(format!(
                "temperature {temperature} outside [0, 2]"
            )));
        }
        if max_output_tokens == 0 {
            return Err(LlmError::Config("max_output_tokens must be positive".into()));
        }
        Ok(Self {
            temperature,
            max_output_tokens,
            seed,
        })
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn max_output_tokens(&self) -> u32 {
        self.max_output_tokens
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }
}

/// A chat-completion backend. Implementations must tolerate concurrent calls.
pub trait ChatBackend: Send + Sync {
    fn name(&self) -> &str;

    fn complete(
        &self,
        conversation: &Conversation,
        params: &CompletionParams,
    ) -> Result<String, LlmError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for &B {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn complete(&self, conversation: &Conversation, params: &CompletionParams) -> Result<String, LlmError> {
        (**self).complete(conversation, params)
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for Box<B> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn complete(&self, conversation: &Conversation, params: &CompletionParams) -> Result<String, LlmError> {
        (**self).complete(conversation, params)
    }
}

/// A backend plus the decoding parameters and verdict retry cap used by every
/// call made on its behalf.
#[derive(Clone, Copy)]
pub struct Session<'a> {
    pub backend: &'a dyn ChatBackend,
    pub params: CompletionParams,
    /// Maximum attempts when a reply has to be re-requested.
    pub retry_cap: u32,
}

impl<'a> Session<'a> {
    pub const DEFAULT_RETRY_CAP: u32 = 3;

    pub fn new(backend: &'a dyn ChatBackend) -> Self {
        Self {
            backend,
            params: CompletionParams::default(),
            retry_cap: Self::DEFAULT_RETRY_CAP,
        }
    }

    pub fn with_retry_cap(mut self, cap: u32) -> Self {
        self.retry_cap = cap;
        self
    }

    pub fn with_params(mut self, params: CompletionParams) -> Self {
        self.params = params;
        self
    }

    pub fn complete(&self, conversation: &Conversation) -> Result<String, LlmError> {
        self.backend.complete(conversation, &self.params)
    }
}

impl fmt::Debug for Session<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Session")
            .field("backend", &self.backend.name())
            .field("params", &self.params)
            .field("retry_cap", &self.retry_cap)
            .finish()
    }
}
