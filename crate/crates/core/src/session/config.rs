use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::SessionError;
use crate::agents::HeuristicSpec;
use crate::llm::{LlmAgentConfig, DEFAULT_API_KEY_ENV, DEFAULT_ENDPOINT};
use crate::market::MarketSpec;
use crate::transcript::SCHEMA_VERSION;

fn default_schema_version() -> u32 {
    SCHEMA_VERSION
}
fn default_rounds() -> usize {
    50
}
fn default_display_decimals() -> u32 {
    2
}
fn default_first_round_bounds() -> [f64; 2] {
    [1.0, 100.0]
}
fn default_endpoint() -> String {
    DEFAULT_ENDPOINT.to_string()
}
fn default_api_key_env() -> String {
    DEFAULT_API_KEY_ENV.to_string()
}
fn default_temperature_noise() -> f64 {
    0.5
}

/// One participant slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgentPolicy {
    Heuristic(HeuristicSpec),
    Llm(LlmAgentConfig),
    /// Re-emits agent `agent` of a recorded transcript.
    Replay { transcript: PathBuf, agent: usize },
    /// Forecasts arrive through the human-participant protocol.
    Human,
}

impl AgentPolicy {
    pub fn label(&self) -> String {
        match self {
            AgentPolicy::Heuristic(spec) => spec.label(),
            AgentPolicy::Llm(c) => format!("llm:{}", c.model_id),
            AgentPolicy::Replay { agent, .. } => format!("replay:{agent}"),
            AgentPolicy::Human => "human".to_string(),
        }
    }
}

/// Where LLM agents send their requests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    Live {
        #[serde(default = "default_endpoint")]
        endpoint: String,
        #[serde(default = "default_api_key_env")]
        api_key_env: String,
    },
    /// Scripted stand-in answering through the chat interface.
    Mock {
        policy: HeuristicSpec,
        #[serde(default = "default_temperature_noise")]
        temperature_noise: f64,
    },
    /// LLM and human slots re-emit the forecasts stored in `transcript`.
    Replay { transcript: PathBuf },
}

/// Everything needed to run (and exactly re-run) one session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    pub session_id: String,
    pub seed: u64,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    /// Decimal places of prices and forecasts shown to agents.
    #[serde(default = "default_display_decimals")]
    pub display_decimals: u32,
    #[serde(default = "default_first_round_bounds")]
    pub first_round_bounds: [f64; 2],
    pub market: MarketSpec,
    pub agents: Vec<AgentPolicy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend: Option<BackendConfig>,
}

impl SessionConfig {
    pub fn new(session_id: impl Into<String>, seed: u64, market: MarketSpec, agents: Vec<AgentPolicy>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            session_id: session_id.into(),
            seed,
            rounds: default_rounds(),
            display_decimals: default_display_decimals(),
            first_round_bounds: default_first_round_bounds(),
            market,
            agents,
            backend: None,
        }
    }

    pub fn with_rounds(mut self, rounds: usize) -> Self {
        self.rounds = rounds;
        self
    }

    pub fn with_backend(mut self, backend: BackendConfig) -> Self {
        self.backend = Some(backend);
        self
    }

    pub fn from_json(text: &str) -> Result<Self, SessionError> {
        let config: SessionConfig = serde_json::from_str(text).map_err(|e| SessionError::Config {
            field: "document".into(),
            reason: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn has_human_slots(&self) -> bool {
        self.agents.iter().any(|a| matches!(a, AgentPolicy::Human))
    }

    pub fn human_slots(&self) -> Vec<usize> {
        self.agents
            .iter()
            .enumerate()
            .filter(|(_, a)| matches!(a, AgentPolicy::Human))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn validate(&self) -> Result<(), SessionError> {
        let bad = |field: &str, reason: String| SessionError::Config {
            field: field.to_string(),
            reason,
        };
        if self.schema_version != SCHEMA_VERSION {
            return Err(bad(
                "schema_version",
                format!("{} is not supported (expected {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        if self.session_id.trim().is_empty() {
            return Err(bad("session_id", "must not be empty".into()));
        }
        if self.rounds == 0 {
            return Err(bad("rounds", "must be at least 1".into()));
        }
        if self.agents.is_empty() {
            return Err(bad("agents", "at least one agent is required".into()));
        }
        if self.display_decimals > 6 {
            return Err(bad("display_decimals", format!("{} exceeds 6", self.display_decimals)));
        }
        let [lo, hi] = self.first_round_bounds;
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo < hi) {
            return Err(bad(
                "first_round_bounds",
                format!("[{lo}, {hi}] must satisfy 0 < lo < hi"),
            ));
        }
        self.market.validate().map_err(|e| bad("market", e.to_string()))?;
        for (i, agent) in self.agents.iter().enumerate() {
            let field = format!("agents[{i}]");
            match agent {
                AgentPolicy::Heuristic(spec) => {
                    spec.params().map_err(|r| bad(&field, r))?;
                }
                AgentPolicy::Llm(c) => {
                    c.validate().map_err(|r| bad(&field, r))?;
                    if self.backend.is_none() {
                        return Err(bad("backend", format!("{field} is an llm agent but no backend is configured")));
                    }
                }
                AgentPolicy::Replay { .. } | AgentPolicy::Human => {}
            }
        }
        if let Some(BackendConfig::Mock { policy, temperature_noise }) = &self.backend {
            policy.params().map_err(|r| bad("backend.policy", r))?;
            if !temperature_noise.is_finite() || *temperature_noise < 0.0 {
                return Err(bad("backend.temperature_noise", "must be >= 0".into()));
            }
        }
        Ok(())
    }
}
