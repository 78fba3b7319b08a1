use std::fmt;
use std::thread;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use super::{BackendConfig, BackendError, ChatBackend, ChatRequest, MessageOrigin};

/// OpenAI-compatible `POST {endpoint}/chat/completions` client.
pub struct HttpBackend {
    config: BackendConfig,
    client: reqwest::blocking::Client,
}

impl fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpBackend").field("config", &self.config).finish()
    }
}

#[derive(Debug, Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage>,
    temperature: f32,
}

#[derive(Debug, Serialize)]
struct WireMessage {
    role: &'static str,
    content: String,
}

#[derive(Debug, Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Debug, Deserialize)]
struct WireChoice {
    message: WireContent,
}

#[derive(Debug, Deserialize)]
struct WireContent {
    content: Option<String>,
}

impl HttpBackend {
    pub fn new(config: BackendConfig) -> Result<Self, BackendError> {
        config.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout())
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(HttpBackend { config, client })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    fn url(&self) -> String {
        let base = self.config.endpoint.trim_end_matches('/');
        if base.ends_with("chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }

    fn credential(&self) -> Result<Option<String>, BackendError> {
        if self.config.credential.is_empty() {
            return Ok(None);
        }
        std::env::var(&self.config.credential)
            .map(Some)
            .map_err(|_| BackendError::MissingCredential(self.config.credential.clone()))
    }

    /// Maps the engine's messages onto system/user/assistant roles. Other
    /// speakers' turns become `user` messages prefixed with their id so the
    /// model can tell participants apart.
    fn wire_messages(request: &ChatRequest) -> Vec<WireMessage> {
        let mut out = Vec::with_capacity(request.history.len() + 1);
        if !request.system.is_empty() {
            out.push(WireMessage {
                role: "system",
                content: request.system.clone(),
            });
        }
        for m in &request.history {
            let (role, content) = match (m.origin, m.speaker_id.as_deref()) {
                (MessageOrigin::System, _) => ("system", m.content.clone()),
                (MessageOrigin::Agent, Some(id)) if id == request.speaker_id => {
                    ("assistant", m.content.clone())
                }
                (_, Some(id)) => ("user", format!("[{id}]: {}", m.content)),
                (_, None) => ("user", m.content.clone()),
            };
            out.push(WireMessage { role, content });
        }
        out
    }

    fn attempt(&self, body: &WireRequest<'_>, key: Option<&str>) -> Result<String, BackendError> {
        let mut req = self.client.post(self.url()).json(body);
        if let Some(key) = key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout
            } else {
                BackendError::Transport(e.to_string())
            }
        })?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(BackendError::Status {
                status: status.as_u16(),
                body: body.chars().take(512).collect(),
            });
        }
        let parsed: WireResponse = resp.json().map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout
            } else {
                BackendError::Transport(format!("malformed response: {e}"))
            }
        })?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .filter(|c| !c.trim().is_empty())
            .ok_or(BackendError::EmptyCompletion)
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        if request.system.is_empty() && request.history.is_empty() {
            return Err(BackendError::InvalidRequest("empty prompt".into()));
        }
        let key = self.credential()?;
        let body = WireRequest {
            model: &self.config.model_name,
            messages: Self::wire_messages(request),
            temperature: request.temperature,
        };
        let attempts = self.config.max_retries + 1;
        let mut last = None;
        for attempt in 0..attempts {
            if attempt > 0 {
                thread::sleep(self.config.retry.delay(attempt - 1));
            }
            debug!(
                "chat completion for `{}` model={} attempt {}/{}",
                request.speaker_id,
                self.config.model_name,
                attempt + 1,
                attempts
            );
            match self.attempt(&body, key.as_deref()) {
                Ok(text) => return Ok(text),
                Err(e) if e.is_retryable() => {
                    warn!("chat completion attempt {} failed: {e}", attempt + 1);
                    last = Some(e);
                }
                Err(e) => return Err(e),
            }
        }
        Err(BackendError::RetriesExhausted {
            attempts,
            cause: Box::new(last.expect("at least one attempt")),
        })
    }

    fn name(&self) -> &str {
        "http"
    }
}
