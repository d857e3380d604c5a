//! Round logic for sessions with human participants.
//!
//! Forecasts from human slots are collected one by one; the round closes
//! (and scripted/LLM slots are queried) when the last human slot submits.
//! Results handed back to a participant contain only market data and that
//! participant's own forecasts and earnings.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{SessionConfig, SessionEngine, SessionError, SessionStatus};
use crate::llm::instruction_text;
use crate::market::FeedbackType;

#[derive(Debug, Error)]
pub enum HumanError {
    #[error("invalid forecast: {0}")]
    Validation(String),
    #[error("agent {agent} already submitted a forecast for round {round}")]
    Duplicate { agent: usize, round: usize },
    #[error("round {round} is closed; the open round is {open}")]
    StaleRound { round: usize, open: usize },
    #[error("round {round} is not open yet; the open round is {open}")]
    RoundNotOpen { round: usize, open: usize },
    #[error("slot {0} is not a human participant slot")]
    NotHumanSlot(usize),
    #[error("slot {0} is already taken")]
    SlotTaken(usize),
    #[error("no free human slot left")]
    NoFreeSlot,
    #[error("session is {0}")]
    Closed(&'static str),
    #[error(transparent)]
    Engine(#[from] SessionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParticipantStatus {
    AwaitingInput,
    WaitingForOthers,
    Complete,
    Aborted,
}

/// Outcome of a closed round as seen by one participant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundResult {
    pub round: usize,
    pub price: f64,
    pub own_prediction: f64,
    pub earnings_delta: f64,
    pub total_earnings: f64,
    /// Realized prices, chronological.
    pub price_history: Vec<f64>,
    /// This participant's forecasts, chronological.
    pub own_predictions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SubmitOutcome {
    Waiting { round: usize, pending: usize },
    Result(RoundResult),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRules {
    pub round: usize,
    pub min: f64,
    /// Upper bound; only set in round 1.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    /// Whether `min` itself is allowed.
    pub min_inclusive: bool,
    pub max_decimals: u32,
}

/// Everything the participant interface shows for one slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantView {
    pub session_id: String,
    pub agent: usize,
    pub feedback: FeedbackType,
    pub rounds: usize,
    /// Open round, or `rounds + 1` once the session is over.
    pub round: usize,
    pub status: ParticipantStatus,
    /// Realized prices, chronological.
    pub price_history: Vec<f64>,
    /// Own forecasts, chronological.
    pub own_predictions: Vec<f64>,
    pub total_earnings: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub last_result: Option<RoundResult>,
    pub rules: ForecastRules,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub rounds: usize,
    pub completed_rounds: usize,
    pub status: SessionStatus,
    pub human_slots: Vec<usize>,
    pub joined: Vec<usize>,
    pub submitted: Vec<usize>,
    pub prices: Vec<f64>,
}

/// Bounds a forecast must satisfy in `round`.
pub fn forecast_rules(config: &SessionConfig, round: usize) -> ForecastRules {
    if round <= 1 {
        ForecastRules {
            round,
            min: config.first_round_bounds[0],
            max: Some(config.first_round_bounds[1]),
            min_inclusive: true,
            max_decimals: config.display_decimals,
        }
    } else {
        ForecastRules {
            round,
            min: 0.0,
            max: None,
            min_inclusive: false,
            max_decimals: config.display_decimals,
        }
    }
}

/// Checks a submitted value against `rules`; the error text is shown to the participant.
pub fn validate_forecast(value: f64, rules: &ForecastRules) -> Result<(), String> {
    if !value.is_finite() {
        return Err("forecast must be a finite number".into());
    }
    match rules.max {
        Some(max) => {
            if value < rules.min || value > max {
                return Err(format!("forecast must lie between {} and {max}", rules.min));
            }
        }
        None => {
            let ok = if rules.min_inclusive { value >= rules.min } else { value > rules.min };
            if !ok {
                return Err("forecast must be positive".into());
            }
        }
    }
    let scale = 10f64.powi(rules.max_decimals as i32);
    let scaled = value * scale;
    if (scaled - scaled.round()).abs() > 1e-6 * scaled.abs().max(1.0) {
        return Err(format!("forecast must have at most {} decimals", rules.max_decimals));
    }
    Ok(())
}

#[derive(Debug, Clone)]
struct Pending {
    value: f64,
    token: Option<String>,
}

/// Joined slots and forecasts accepted for the open round, for keeping
/// them across a restart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenRoundSnapshot {
    pub round: usize,
    pub joined: Vec<usize>,
    pub submissions: Vec<SnapshotEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotEntry {
    pub agent: usize,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token: Option<String>,
}

/// A session some of whose slots are played by people.
#[derive(Debug)]
pub struct HumanSession {
    engine: SessionEngine,
    joined: BTreeSet<usize>,
    pending: BTreeMap<usize, Pending>,
}

impl HumanSession {
    pub fn create(config: SessionConfig, transcript: Option<&Path>) -> Result<Self, HumanError> {
        let engine = SessionEngine::create(config, transcript)?;
        Ok(Self::wrap(engine))
    }

    /// Reopens a session from its transcript. Forecasts submitted for the
    /// open round are not in the transcript; see [`restore`](Self::restore).
    pub fn resume(transcript: &Path) -> Result<Self, HumanError> {
        Ok(Self::wrap(SessionEngine::resume(transcript)?))
    }

    fn wrap(engine: SessionEngine) -> Self {
        Self {
            engine,
            joined: BTreeSet::new(),
            pending: BTreeMap::new(),
        }
    }

    pub fn engine(&self) -> &SessionEngine {
        &self.engine
    }

    pub fn config(&self) -> &SessionConfig {
        self.engine.config()
    }

    pub fn instructions(&self) -> String {
        let c = self.config();
        instruction_text(c.market.feedback, c.rounds)
    }

    fn check_slot(&self, agent: usize) -> Result<(), HumanError> {
        if self.config().human_slots().contains(&agent) {
            Ok(())
        } else {
            Err(HumanError::NotHumanSlot(agent))
        }
    }

    /// Claims `slot`, or the lowest free human slot.
    pub fn join(&mut self, slot: Option<usize>) -> Result<usize, HumanError> {
        let slot = match slot {
            Some(s) => {
                self.check_slot(s)?;
                if self.joined.contains(&s) {
                    return Err(HumanError::SlotTaken(s));
                }
                s
            }
            None => self
                .config()
                .human_slots()
                .into_iter()
                .find(|s| !self.joined.contains(s))
                .ok_or(HumanError::NoFreeSlot)?,
        };
        self.joined.insert(slot);
        Ok(slot)
    }

    fn result_for(&self, agent: usize, round: usize) -> Option<RoundResult> {
        let records = self.engine.records();
        let record = records.get(round.checked_sub(1)?)?;
        let entry = record.agents.get(agent)?;
        let prefix = &records[..round];
        let total: f64 = prefix.iter().map(|r| r.agents[agent].earnings_delta).sum();
        Some(RoundResult {
            round,
            price: record.price,
            own_prediction: entry.prediction,
            earnings_delta: entry.earnings_delta,
            total_earnings: total,
            price_history: prefix.iter().map(|r| r.price).collect(),
            own_predictions: prefix.iter().map(|r| r.agents[agent].prediction).collect(),
        })
    }

    /// Result of a closed round for `agent`; `None` while the round is open.
    pub fn round_result(&self, agent: usize, round: usize) -> Result<Option<RoundResult>, HumanError> {
        self.check_slot(agent)?;
        Ok(self.result_for(agent, round))
    }

    fn status_for(&self, agent: usize) -> ParticipantStatus {
        match self.engine.state().status {
            SessionStatus::Complete => ParticipantStatus::Complete,
            SessionStatus::Aborted => ParticipantStatus::Aborted,
            SessionStatus::Running if self.pending.contains_key(&agent) => ParticipantStatus::WaitingForOthers,
            SessionStatus::Running => ParticipantStatus::AwaitingInput,
        }
    }

    pub fn view(&self, agent: usize) -> Result<ParticipantView, HumanError> {
        self.check_slot(agent)?;
        let state = self.engine.state();
        let round = self.engine.open_round();
        let view = self.engine.view_for(agent);
        Ok(ParticipantView {
            session_id: self.config().session_id.clone(),
            agent,
            feedback: self.config().market.feedback,
            rounds: self.config().rounds,
            round,
            status: self.status_for(agent),
            price_history: view.price_history.iter().rev().copied().collect(),
            own_predictions: view.own_predictions.iter().rev().copied().collect(),
            total_earnings: state.earnings[agent],
            last_result: self.result_for(agent, state.current_round),
            rules: forecast_rules(self.config(), round),
        })
    }

    /// Records one forecast. Closes the round when it was the last one
    /// missing. Re-sending the same value with the same token is idempotent.
    pub fn submit(
        &mut self,
        agent: usize,
        round: usize,
        value: f64,
        token: Option<String>,
    ) -> Result<SubmitOutcome, HumanError> {
        self.check_slot(agent)?;
        match self.engine.state().status {
            SessionStatus::Running => {}
            SessionStatus::Complete => {
                return Err(HumanError::StaleRound { round, open: self.engine.open_round() });
            }
            SessionStatus::Aborted => return Err(HumanError::Closed("aborted")),
        }
        let open = self.engine.open_round();
        if round < open {
            if token.is_some() {
                if let Some(result) = self.result_for(agent, round) {
                    if result.own_prediction == value {
                        return Ok(SubmitOutcome::Result(result));
                    }
                }
            }
            return Err(HumanError::StaleRound { round, open });
        }
        if round > open {
            return Err(HumanError::RoundNotOpen { round, open });
        }
        if let Some(prev) = self.pending.get(&agent) {
            if token.is_some() && prev.token == token && prev.value == value {
                return Ok(self.waiting(round));
            }
            return Err(HumanError::Duplicate { agent, round });
        }
        validate_forecast(value, &forecast_rules(self.config(), round)).map_err(HumanError::Validation)?;
        self.pending.insert(agent, Pending { value, token });

        if self.pending.len() < self.config().human_slots().len() {
            return Ok(self.waiting(round));
        }
        let external: BTreeMap<usize, f64> = self.pending.iter().map(|(&k, p)| (k, p.value)).collect();
        let played = self.engine.play_round(&external);
        self.pending.clear();
        played?;
        Ok(SubmitOutcome::Result(
            self.result_for(agent, round).expect("round just closed"),
        ))
    }

    fn waiting(&self, round: usize) -> SubmitOutcome {
        SubmitOutcome::Waiting {
            round,
            pending: self.config().human_slots().len() - self.pending.len(),
        }
    }

    pub fn snapshot(&self) -> OpenRoundSnapshot {
        OpenRoundSnapshot {
            round: self.engine.open_round(),
            joined: self.joined.iter().copied().collect(),
            submissions: self
                .pending
                .iter()
                .map(|(&agent, p)| SnapshotEntry {
                    agent,
                    value: p.value,
                    token: p.token.clone(),
                })
                .collect(),
        }
    }

    /// Re-applies a snapshot taken before a restart. Submissions are only
    /// restored when the snapshot belongs to the round that is open now;
    /// joined slots are always restored.
    pub fn restore(&mut self, snapshot: &OpenRoundSnapshot) -> Result<(), HumanError> {
        for &slot in &snapshot.joined {
            self.check_slot(slot)?;
            self.joined.insert(slot);
        }
        if snapshot.round != self.engine.open_round() || self.engine.state().status != SessionStatus::Running {
            return Ok(());
        }
        let rules = forecast_rules(self.config(), snapshot.round);
        for e in &snapshot.submissions {
            self.check_slot(e.agent)?;
            validate_forecast(e.value, &rules).map_err(HumanError::Validation)?;
            self.pending.insert(
                e.agent,
                Pending {
                    value: e.value,
                    token: e.token.clone(),
                },
            );
        }
        Ok(())
    }

    pub fn summary(&self) -> SessionSummary {
        let state = self.engine.state();
        SessionSummary {
            session_id: self.config().session_id.clone(),
            rounds: self.config().rounds,
            completed_rounds: state.current_round,
            status: state.status,
            human_slots: self.config().human_slots(),
            joined: self.joined.iter().copied().collect(),
            submitted: self.pending.keys().copied().collect(),
            prices: state.price_series(),
        }
    }
}
