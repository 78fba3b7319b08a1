//! Chat-completion backends.
//!
//! The engine talks to every provider through [`ChatBackend`]. Production
//! runs use [`HttpBackend`] (an OpenAI-style `chat/completions` endpoint);
//! tests and headless runs use [`ScriptedBackend`], [`FnBackend`] or
//! [`PolicyBackend`], which never touch the network.

mod http;
mod policy;
mod scripted;

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::HttpBackend;
pub use policy::PolicyBackend;
pub use scripted::{scripted_backend, FixtureKey, FixtureSpec, FnBackend, KeyedReplies, ScriptedBackend};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageOrigin {
    System,
    Agent,
    User,
}

/// One message of the conversation handed to a backend.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub origin: MessageOrigin,
    /// `None` exactly for system messages.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speaker_id: Option<String>,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            origin: MessageOrigin::System,
            speaker_id: None,
            content: content.into(),
        }
    }

    pub fn agent(speaker_id: impl Into<String>, content: impl Into<String>) -> Self {
        ChatMessage {
            origin: MessageOrigin::Agent,
            speaker_id: Some(speaker_id.into()),
            content: content.into(),
        }
    }

    pub fn user(speaker_id: impl Into<String>, content: impl Into<String>) -> Self {
        ChatMessage {
            origin: MessageOrigin::User,
            speaker_id: Some(speaker_id.into()),
            content: content.into(),
        }
    }

    pub fn is_valid(&self) -> bool {
        !self.content.is_empty() && (self.origin == MessageOrigin::System) == self.speaker_id.is_none()
    }
}

/// What the caller is asking for. Carried as metadata so deterministic
/// backends can select replies; not sent over the wire.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum RequestTask {
    Teach,
    Interact { function_id: String },
    Decide,
    Label,
}

/// A legal `(agent, function)` pair the manager may pick.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DecisionOption {
    pub agent: String,
    pub function: String,
}

/// Output-shape hint. The backend still returns raw text; parsing is the
/// caller's job.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum OutputConstraint {
    /// A JSON object `{"agent": .., "function": ..}` drawn from `options`.
    Decision { options: Vec<DecisionOption> },
    /// A single FIAS category number 1..=10.
    Category,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub speaker_id: String,
    pub page: Option<usize>,
    pub task: RequestTask,
    pub system: String,
    pub history: Vec<ChatMessage>,
    pub constraint: Option<OutputConstraint>,
    pub temperature: f32,
    /// Teaching script of the current page, when there is one.
    pub material: Option<String>,
}

impl ChatRequest {
    pub fn new(speaker_id: impl Into<String>, task: RequestTask, system: impl Into<String>) -> Self {
        ChatRequest {
            speaker_id: speaker_id.into(),
            page: None,
            task,
            system: system.into(),
            history: Vec::new(),
            constraint: None,
            temperature: 0.7,
            material: None,
        }
    }

    /// Every text the backend would see, joined. Used by prompt inspection.
    pub fn prompt_text(&self) -> String {
        let mut out = self.system.clone();
        for m in &self.history {
            out.push('\n');
            out.push_str(&m.content);
        }
        out
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("request timed out")]
    Timeout,
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("backend returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("backend returned an empty completion")]
    EmptyCompletion,
    #[error("credential environment variable `{0}` is not set")]
    MissingCredential(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("fixture exhausted after {served} replies")]
    FixtureExhausted { served: usize },
    #[error("no fixture reply for speaker `{speaker_id}` on page {page:?}")]
    FixtureMiss { speaker_id: String, page: Option<usize> },
    #[error("invalid fixture: {0}")]
    Fixture(String),
    #[error("gave up after {attempts} attempts: {cause}")]
    RetriesExhausted {
        attempts: u32,
        cause: Box<BackendError>,
    },
    #[error("{0}")]
    Other(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            BackendError::Timeout
                | BackendError::Transport(_)
                | BackendError::Status { .. }
                | BackendError::EmptyCompletion
        )
    }
}

/// A chat-completion provider. Implementations must be shareable across
/// sessions and threads.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError>;

    fn name(&self) -> &str {
        "backend"
    }
}

impl<T: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<T> {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

/// Exponential backoff: `initial`, doubling per retry, capped at `cap`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    #[serde(with = "millis")]
    pub initial: Duration,
    #[serde(with = "millis")]
    pub cap: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            initial: Duration::from_secs(1),
            cap: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (0-based).
    pub fn delay(&self, retry: u32) -> Duration {
        let factor = 1u32.checked_shl(retry).unwrap_or(u32::MAX);
        self.initial.saturating_mul(factor).min(self.cap)
    }
}

mod millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

/// Settings for a live HTTP backend. Holds the *name* of the environment
/// variable carrying the API key, never the key itself.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub endpoint: String,
    #[serde(rename = "model")]
    pub model_name: String,
    #[serde(rename = "credential_env")]
    pub credential: String,
    pub timeout_s: f64,
    /// Sampling temperature for role agents; the manager always uses 0.
    pub temperature: f32,
    pub max_retries: u32,
    #[serde(skip)]
    pub retry: RetryPolicy,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            endpoint: "https://api.openai.com/v1".into(),
            model_name: "gpt-4".into(),
            credential: "CLASSROOM_API_KEY".into(),
            timeout_s: 60.0,
            temperature: 0.7,
            max_retries: 2,
            retry: RetryPolicy::default(),
        }
    }
}

impl fmt::Debug for BackendConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BackendConfig")
            .field("endpoint", &self.endpoint)
            .field("model_name", &self.model_name)
            .field("credential_env", &self.credential)
            .field("timeout_s", &self.timeout_s)
            .field("temperature", &self.temperature)
            .field("max_retries", &self.max_retries)
            .finish()
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.timeout_s.is_nan() || self.timeout_s <= 0.0 {
            return Err(BackendError::InvalidRequest("timeout must be positive".into()));
        }
        if self.endpoint.trim().is_empty() {
            return Err(BackendError::InvalidRequest("empty endpoint".into()));
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_s)
    }
}

/// One-shot call with an explicit config: builds an [`HttpBackend`] and
/// issues a single request (with retries).
pub fn complete(
    config: &BackendConfig,
    system: &str,
    history: &[ChatMessage],
    constraint: Option<OutputConstraint>,
) -> Result<String, BackendError> {
    let backend = HttpBackend::new(config.clone())?;
    let mut request = ChatRequest::new("caller", RequestTask::Decide, system);
    request.history = history.to_vec();
    request.constraint = constraint;
    request.temperature = config.temperature;
    backend.complete(&request)
}
