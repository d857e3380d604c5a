//! Chat-completions bridge for LLM forecasters.
//!
//! [`build_prompt`] assembles the instruction messages, the memory window and
//! the market-data message; [`query_llm`] sends it through a [`ChatBackend`]
//! and validates the JSON reply, retrying with a corrective message.

mod live;
mod mock;
mod prompt;
mod reply;

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agents::{AgentError, AgentOutput, AgentView, Correction, Forecast, Forecaster};
use crate::rng::{fnv1a64, SplitMix64};
use crate::transcript::{ExchangeLog, RoundRecord};

pub use live::{LiveBackend, DEFAULT_API_KEY_ENV, DEFAULT_ENDPOINT};
pub use mock::{FixedValuesMock, HeuristicMock, MockResponse, ScriptedMock};
pub use prompt::{
    build_prompt, instruction_text, parse_market_data, render_market_data, system_messages,
    MarketData, MemoryItem, FIRST_ROUND_MESSAGE, PROMPT_VERSION,
};
pub use reply::{parse_reply, ForecastBounds, LlmReply, ReplyError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }
    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseFormat {
    #[serde(rename = "type")]
    pub kind: String,
}

/// Body of a chat-completions request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub response_format: ResponseFormat,
}

impl ChatRequest {
    pub fn digest(&self) -> String {
        let body = serde_json::to_vec(self).expect("request serializes");
        hex::encode(Sha256::digest(&body))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("transport error: {message}")]
    Transport { message: String, retryable: bool },
    #[error("missing credential: environment variable {0} is not set")]
    MissingCredential(String),
}

/// Anything that turns a chat request into raw reply text.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError>;
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("backend unreachable after {attempts} attempts: {message}")]
    BackendUnreachable { attempts: u32, message: String },
    #[error("invalid reply after {attempts} attempts ({reason}); last raw reply: {raw:?}")]
    InvalidReply { attempts: u32, reason: String, raw: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

fn default_memory_depth() -> usize {
    3
}
fn default_max_retries() -> u32 {
    3
}
fn default_timeout_secs() -> u64 {
    60
}
fn default_backoff_initial_ms() -> u64 {
    500
}
fn default_backoff_max_ms() -> u64 {
    8_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmAgentConfig {
    pub model_id: String,
    pub temperature: f64,
    /// Number of past rounds (market-data message + reply) kept in context.
    #[serde(default = "default_memory_depth")]
    pub memory_depth: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_timeout_secs")]
    pub request_timeout_secs: u64,
    #[serde(default = "default_backoff_initial_ms")]
    pub backoff_initial_ms: u64,
    #[serde(default = "default_backoff_max_ms")]
    pub backoff_max_ms: u64,
}

impl LlmAgentConfig {
    pub fn new(model_id: impl Into<String>, temperature: f64, memory_depth: usize) -> Self {
        Self {
            model_id: model_id.into(),
            temperature,
            memory_depth,
            seed: None,
            max_retries: default_max_retries(),
            request_timeout_secs: default_timeout_secs(),
            backoff_initial_ms: default_backoff_initial_ms(),
            backoff_max_ms: default_backoff_max_ms(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.model_id.trim().is_empty() {
            return Err("model_id must not be empty".into());
        }
        if !self.temperature.is_finite() || !(0.0..=2.0).contains(&self.temperature) {
            return Err(format!("temperature {} must lie in [0, 2]", self.temperature));
        }
        if self.memory_depth > 50 {
            return Err(format!("memory_depth {} exceeds 50", self.memory_depth));
        }
        Ok(())
    }

    pub fn request_timeout(&self) -> Duration {
        Duration::from_secs(self.request_timeout_secs)
    }
}

/// Message appended after an unusable reply.
pub fn corrective_message(reason: &str) -> String {
    format!(
        "Your previous response could not be used ({reason}). Your response should be exclusively in JSON format with two keys: 'reasoning' and 'predictedValue', the numeric value of your predicted market price (positive, at most two decimals). Nothing outside the JSON format should be written."
    )
}

/// Outcome of a successful query.
#[derive(Debug, Clone, PartialEq)]
pub struct LlmExchange {
    pub reply: LlmReply,
    pub retry_count: u32,
    pub request_digest: String,
    pub responses: Vec<String>,
}

fn backoff_delay(config: &LlmAgentConfig, attempt: u32, jitter_key: u64) -> Duration {
    if config.backoff_initial_ms == 0 {
        return Duration::ZERO;
    }
    let base = config
        .backoff_initial_ms
        .saturating_mul(1u64 << attempt.min(16))
        .min(config.backoff_max_ms);
    // Jitter in [0.5, 1.0) of the capped delay.
    let j = 0.5 + 0.5 * SplitMix64::new(jitter_key ^ u64::from(attempt)).next_f64();
    Duration::from_millis((base as f64 * j) as u64)
}

fn send_with_backoff(
    backend: &dyn ChatBackend,
    config: &LlmAgentConfig,
    request: &ChatRequest,
    jitter_key: u64,
) -> Result<String, LlmError> {
    let mut attempt = 0u32;
    loop {
        match backend.complete(request) {
            Ok(text) => return Ok(text),
            Err(BackendError::Transport { message, retryable }) => {
                if !retryable || attempt >= config.max_retries {
                    return Err(LlmError::BackendUnreachable {
                        attempts: attempt + 1,
                        message,
                    });
                }
                log::warn!("transport error (attempt {}): {message}", attempt + 1);
                std::thread::sleep(backoff_delay(config, attempt, jitter_key));
                attempt += 1;
            }
            Err(other) => return Err(other.into()),
        }
    }
}

/// Sends `messages`, validates the reply and retries malformed output up to
/// `max_retries` times with a corrective user message appended.
pub fn query_llm(
    backend: &dyn ChatBackend,
    config: &LlmAgentConfig,
    messages: &[ChatMessage],
    bounds: ForecastBounds,
) -> Result<LlmExchange, LlmError> {
    let mut conversation = messages.to_vec();
    let mut responses = Vec::new();
    let mut first_digest = None;
    let mut last_reason = String::new();

    for attempt in 0..=config.max_retries {
        let request = ChatRequest {
            model: config.model_id.clone(),
            messages: conversation.clone(),
            temperature: config.temperature,
            seed: config.seed,
            response_format: ResponseFormat { kind: "json_object".into() },
        };
        let digest = request.digest();
        let key = fnv1a64(digest.as_bytes());
        first_digest.get_or_insert_with(|| digest.clone());
        let raw = send_with_backoff(backend, config, &request, key)?;
        responses.push(raw.clone());
        match parse_reply(&raw, bounds) {
            Ok(reply) => {
                return Ok(LlmExchange {
                    reply,
                    retry_count: attempt,
                    request_digest: first_digest.unwrap_or(digest),
                    responses,
                })
            }
            Err(err) => {
                last_reason = err.to_string();
                log::info!("unusable reply on attempt {}: {last_reason}", attempt + 1);
                if !raw.trim().is_empty() {
                    conversation.push(ChatMessage::assistant(raw));
                }
                conversation.push(ChatMessage::user(corrective_message(&last_reason)));
            }
        }
    }

    Err(LlmError::InvalidReply {
        attempts: config.max_retries + 1,
        reason: last_reason,
        raw: responses.pop().unwrap_or_default(),
    })
}

/// A forecaster backed by a chat model.
pub struct LlmAgent {
    config: LlmAgentConfig,
    backend: Arc<dyn ChatBackend>,
    memory: Vec<MemoryItem>,
    index: usize,
    rounds: usize,
    first_round_bounds: (f64, f64),
    display_decimals: u32,
}

impl LlmAgent {
    pub fn new(
        config: LlmAgentConfig,
        backend: Arc<dyn ChatBackend>,
        index: usize,
        rounds: usize,
        first_round_bounds: (f64, f64),
        display_decimals: u32,
    ) -> Self {
        Self {
            config,
            backend,
            memory: Vec::new(),
            index,
            rounds,
            first_round_bounds,
            display_decimals,
        }
    }

    pub fn memory(&self) -> &[MemoryItem] {
        &self.memory
    }

    fn window(&self) -> &[MemoryItem] {
        let keep = self.config.memory_depth.min(self.memory.len());
        &self.memory[self.memory.len() - keep..]
    }
}

impl Forecaster for LlmAgent {
    fn forecast(&mut self, view: &AgentView) -> Result<AgentOutput, AgentError> {
        let messages = prompt::build_prompt_with_bounds(
            &self.config,
            view,
            self.window(),
            self.rounds,
            self.display_decimals,
            self.first_round_bounds,
        );
        let bounds = if view.round == 1 {
            ForecastBounds::closed(self.first_round_bounds.0, self.first_round_bounds.1)
        } else {
            ForecastBounds::positive()
        };
        let exchange = query_llm(self.backend.as_ref(), &self.config, &messages, bounds).map_err(
            |source| AgentError::Llm {
                agent: self.index,
                round: view.round,
                source,
            },
        )?;
        let user_message = messages
            .last()
            .map(|m| m.content.clone())
            .unwrap_or_default();
        let reply = exchange.reply;
        Ok(AgentOutput {
            forecast: Forecast {
                value: reply.predicted_value,
                reasoning: reply.reasoning,
                correction: reply
                    .normalized_from
                    .map(|raw| Correction::RoundedToTwoDecimals { raw }),
            },
            prompt_digest: Some(exchange.request_digest),
            retry_count: exchange.retry_count,
            exchange: Some(ExchangeLog {
                user_message,
                responses: exchange.responses,
            }),
        })
    }

    fn observe(&mut self, record: &RoundRecord, agent: usize) {
        let Some(entry) = record.agents.get(agent) else { return };
        let user_message = entry
            .exchange
            .as_ref()
            .map(|e| e.user_message.clone())
            .unwrap_or_default();
        self.memory.push(MemoryItem {
            round: record.round,
            user_message,
            reasoning: entry.reasoning.clone(),
            prediction: entry.prediction,
        });
    }

    fn kind(&self) -> &'static str {
        "llm"
    }
}

impl std::fmt::Debug for LlmAgent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmAgent")
            .field("config", &self.config)
            .field("index", &self.index)
            .field("memory_len", &self.memory.len())
            .finish()
    }
}
