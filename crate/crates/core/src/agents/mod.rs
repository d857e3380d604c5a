//! Forecasting agents.
//!
//! An agent only ever sees an [`AgentView`]: realized prices, its own past
//! forecasts and its own accumulated earnings. Other agents' forecasts are not
//! representable in that type.

mod heuristic;
mod replay;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market::{round_to, FeedbackType};
use crate::transcript::{ExchangeLog, RoundRecord};

pub use heuristic::{
    bootstrap_forecast, heuristic_forecast, HeuristicAgent, HeuristicParams, HeuristicSpec,
    Preset, MIN_SCRIPTED_FORECAST,
};
pub use replay::{replay_forecast, ReplayAgent};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("replay exhausted: no stored forecast for round {round}, agent {agent}")]
    ReplayExhausted { round: usize, agent: usize },
    #[error("agent {agent} produced an invalid forecast: {reason}")]
    InvalidForecast { agent: usize, reason: String },
    #[error("llm agent {agent} failed in round {round}: {source}")]
    Llm {
        agent: usize,
        round: usize,
        #[source]
        source: crate::llm::LlmError,
    },
    #[error("invalid agent configuration: {0}")]
    Config(String),
}

/// What one agent is allowed to know when forecasting round `round`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentView {
    pub round: usize,
    /// Realized prices up to `round - 1`, newest first.
    pub price_history: Vec<f64>,
    /// This agent's forecasts up to `round - 1`, newest first.
    pub own_predictions: Vec<f64>,
    pub total_earnings: f64,
    pub feedback: FeedbackType,
}

impl AgentView {
    /// Builds a view from chronological (oldest first) series.
    pub fn from_chronological(
        prices: &[f64],
        own_predictions: &[f64],
        total_earnings: f64,
        feedback: FeedbackType,
    ) -> Self {
        assert_eq!(
            prices.len(),
            own_predictions.len(),
            "price and prediction histories must have equal length"
        );
        Self {
            round: prices.len() + 1,
            price_history: prices.iter().rev().copied().collect(),
            own_predictions: own_predictions.iter().rev().copied().collect(),
            total_earnings,
            feedback,
        }
    }

    /// `p_{t-lag}` for `lag >= 1`.
    pub fn price_lag(&self, lag: usize) -> Option<f64> {
        lag.checked_sub(1).and_then(|i| self.price_history.get(i).copied())
    }

    /// Own forecast for round `t - lag`.
    pub fn own_lag(&self, lag: usize) -> Option<f64> {
        lag.checked_sub(1).and_then(|i| self.own_predictions.get(i).copied())
    }
}

/// Why a forecast was altered before entering the market.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Correction {
    /// Non-positive scripted output replaced by the minimum forecast.
    ClampedToMinimum { raw: f64 },
    /// More than two decimals; rounded half-to-even.
    RoundedToTwoDecimals { raw: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    /// The value entering the market.
    pub value: f64,
    #[serde(default)]
    pub reasoning: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correction: Option<Correction>,
}

impl Forecast {
    pub fn new(value: f64) -> Self {
        Self {
            value,
            reasoning: String::new(),
            correction: None,
        }
    }

    pub fn with_reasoning(mut self, reasoning: impl Into<String>) -> Self {
        self.reasoning = reasoning.into();
        self
    }

    /// Two-decimal value shown at agent and UI boundaries.
    pub fn display_value(&self) -> f64 {
        round_to(self.value, 2)
    }
}

/// Everything an agent hands back for one round.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentOutput {
    pub forecast: Forecast,
    pub prompt_digest: Option<String>,
    pub retry_count: u32,
    pub exchange: Option<ExchangeLog>,
}

impl From<Forecast> for AgentOutput {
    fn from(forecast: Forecast) -> Self {
        Self {
            forecast,
            prompt_digest: None,
            retry_count: 0,
            exchange: None,
        }
    }
}

/// A participant the engine can query without outside input.
pub trait Forecaster: Send {
    fn forecast(&mut self, view: &AgentView) -> Result<AgentOutput, AgentError>;

    /// Invoked once the round is closed and recorded.
    fn observe(&mut self, _record: &RoundRecord, _agent: usize) {}

    /// Rebuilds internal state from an already-recorded prefix when resuming.
    fn restore(&mut self, records: &[RoundRecord], agent: usize) {
        for record in records {
            self.observe(record, agent);
        }
    }

    fn kind(&self) -> &'static str;
}
