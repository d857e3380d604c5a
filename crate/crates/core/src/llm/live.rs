//! Blocking client for an OpenAI-compatible `/chat/completions` endpoint.

use std::time::Duration;

use serde::Deserialize;

use super::{BackendError, ChatBackend, ChatRequest};

pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1";
pub const DEFAULT_API_KEY_ENV: &str = "OPENAI_API_KEY";

#[derive(Debug, Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Debug, Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

pub struct LiveBackend {
    agent: ureq::Agent,
    url: String,
    api_key: String,
}

impl LiveBackend {
    /// `endpoint` is the API base (e.g. `https://api.openai.com/v1`); the
    /// credential is read from `api_key_env`.
    pub fn from_env(endpoint: &str, api_key_env: &str, timeout: Duration) -> Result<Self, BackendError> {
        let api_key = std::env::var(api_key_env)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| BackendError::MissingCredential(api_key_env.to_string()))?;
        Ok(Self::new(endpoint, api_key, timeout))
    }

    pub fn new(endpoint: &str, api_key: String, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        Self {
            agent: config.into(),
            url: format!("{}/chat/completions", endpoint.trim_end_matches('/')),
            api_key,
        }
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

impl ChatBackend for LiveBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let transport = |message: String, retryable: bool| BackendError::Transport { message, retryable };
        let mut response = self
            .agent
            .post(&self.url)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(request)
            .map_err(|e| transport(e.to_string(), true))?;
        let status = response.status().as_u16();
        let body = response
            .body_mut()
            .read_to_string()
            .map_err(|e| transport(e.to_string(), true))?;
        if status == 429 || status >= 500 {
            return Err(transport(format!("HTTP {status}: {body}"), true));
        }
        if !(200..300).contains(&status) {
            return Err(transport(format!("HTTP {status}: {body}"), false));
        }
        let parsed: CompletionResponse = serde_json::from_str(&body)
            .map_err(|e| transport(format!("malformed completion body: {e}"), false))?;
        Ok(parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default())
    }
}

impl std::fmt::Debug for LiveBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LiveBackend").field("url", &self.url).finish_non_exhaustive()
    }
}
