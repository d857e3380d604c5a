//! Round-by-round orchestration of one market session.
//!
//! Every round: build each agent's view, collect all forecasts (scripted and
//! LLM agents concurrently, human forecasts from outside), draw the market
//! shock, compute price and payoffs, then append and sync the record before
//! the next round opens.

mod config;
mod human;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentError, AgentOutput, AgentView, Forecast, Forecaster, HeuristicAgent, ReplayAgent};
use crate::llm::{BackendError, ChatBackend, HeuristicMock, LiveBackend, LlmAgent, LlmAgentConfig};
use crate::market::{draw_noise, earnings, mean_forecast, price_from_mean, MarketError, PricePoint};
use crate::rng::SplitMix64;
use crate::transcript::{
    read_transcript, record_checksum, AgentRoundEntry, RoundRecord, Transcript, TranscriptError,
    TranscriptHeader, TranscriptWriter,
};

pub use config::{AgentPolicy, BackendConfig, SessionConfig};
pub use human::{
    forecast_rules, validate_forecast, ForecastRules, HumanError, HumanSession, OpenRoundSnapshot,
    ParticipantStatus, ParticipantView, RoundResult, SessionSummary, SnapshotEntry, SubmitOutcome,
};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error(transparent)]
    Transcript(#[from] TranscriptError),
    #[error("round {round} is missing forecasts from human slots {missing:?}")]
    MissingHumanForecasts { round: usize, missing: Vec<usize> },
    #[error("session has already {0}")]
    NotRunning(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Running,
    Complete,
    Aborted,
}

/// Full-precision state after `current_round` closed rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub current_round: usize,
    pub prices: Vec<PricePoint>,
    /// Per agent, chronological.
    pub forecasts: Vec<Vec<Forecast>>,
    /// Cumulative earnings per agent.
    pub earnings: Vec<f64>,
    pub status: SessionStatus,
}

impl SessionState {
    pub fn new(agents: usize) -> Self {
        Self {
            current_round: 0,
            prices: Vec::new(),
            forecasts: vec![Vec::new(); agents],
            earnings: vec![0.0; agents],
            status: SessionStatus::Running,
        }
    }

    pub fn price_series(&self) -> Vec<f64> {
        self.prices.iter().map(|p| p.price).collect()
    }

    /// What agent `agent` may see before forecasting the next round.
    pub fn view_for(&self, agent: usize, feedback: crate::market::FeedbackType) -> AgentView {
        let own: Vec<f64> = self.forecasts[agent].iter().map(|f| f.value).collect();
        AgentView::from_chronological(&self.price_series(), &own, self.earnings[agent], feedback)
    }

    fn apply(&mut self, record: &RoundRecord) {
        self.current_round = record.round;
        self.prices.push(PricePoint {
            round: record.round,
            price: record.price,
            noise_draw: record.noise_draw,
            pre_clamp: record.price_pre_clamp,
        });
        for entry in &record.agents {
            self.forecasts[entry.agent].push(Forecast {
                value: entry.prediction,
                reasoning: entry.reasoning.clone(),
                correction: entry.correction,
            });
            self.earnings[entry.agent] += entry.earnings_delta;
        }
    }
}

fn build_backend(config: &SessionConfig) -> Result<Option<Arc<dyn ChatBackend>>, SessionError> {
    let has_llm = config.agents.iter().any(|a| matches!(a, AgentPolicy::Llm(_)));
    if !has_llm {
        return Ok(None);
    }
    let timeout = config
        .agents
        .iter()
        .filter_map(|a| match a {
            AgentPolicy::Llm(c) => Some(c.request_timeout()),
            _ => None,
        })
        .max()
        .unwrap_or(Duration::from_secs(60));
    match &config.backend {
        Some(BackendConfig::Live { endpoint, api_key_env }) => {
            Ok(Some(Arc::new(LiveBackend::from_env(endpoint, api_key_env, timeout)?)))
        }
        Some(BackendConfig::Mock { policy, temperature_noise }) => {
            let mock = HeuristicMock::new(policy, *temperature_noise).map_err(|reason| SessionError::Config {
                field: "backend.policy".into(),
                reason,
            })?;
            Ok(Some(Arc::new(mock)))
        }
        Some(BackendConfig::Replay { .. }) => Ok(None),
        None => Err(SessionError::Config {
            field: "backend".into(),
            reason: "llm agents need a backend".into(),
        }),
    }
}

/// Request seed for an LLM agent without an explicit one, derived from the
/// session seed so agents sharing a model still differ.
fn llm_request_seed(config: &SessionConfig, index: usize) -> u64 {
    SplitMix64::derive(config.seed, &config.session_id, "llm-seed", index as u64).next_u64() >> 1
}

type Slots = Vec<Option<Box<dyn Forecaster>>>;

/// Instantiates every non-human slot. Fails before any round is played when
/// a backend or transcript cannot be resolved.
fn build_agents(config: &SessionConfig) -> Result<Slots, SessionError> {
    let backend = build_backend(config)?;
    let mut loaded: HashMap<PathBuf, Arc<Vec<RoundRecord>>> = HashMap::new();
    let mut load = |path: &Path| -> Result<Arc<Vec<RoundRecord>>, SessionError> {
        if let Some(r) = loaded.get(path) {
            return Ok(r.clone());
        }
        let records = Arc::new(read_transcript(path)?.records);
        loaded.insert(path.to_path_buf(), records.clone());
        Ok(records)
    };
    let replay_all = match &config.backend {
        Some(BackendConfig::Replay { transcript }) => Some(load(transcript)?),
        _ => None,
    };

    let mut slots: Slots = Vec::with_capacity(config.agents.len());
    for (i, policy) in config.agents.iter().enumerate() {
        let slot: Option<Box<dyn Forecaster>> = match policy {
            AgentPolicy::Heuristic(spec) => {
                Some(Box::new(HeuristicAgent::new(spec, config.seed, &config.session_id, i)?))
            }
            AgentPolicy::Llm(c) => match (&replay_all, &backend) {
                (Some(records), _) => Some(Box::new(ReplayAgent::new(records.clone(), i))),
                (None, Some(b)) => {
                    let mut c: LlmAgentConfig = c.clone();
                    c.seed.get_or_insert_with(|| llm_request_seed(config, i));
                    Some(Box::new(LlmAgent::new(
                        c,
                        b.clone(),
                        i,
                        config.rounds,
                        (config.first_round_bounds[0], config.first_round_bounds[1]),
                        config.display_decimals,
                    )))
                }
                (None, None) => unreachable!("backend resolved for llm agents"),
            },
            AgentPolicy::Replay { transcript, agent } => {
                Some(Box::new(ReplayAgent::new(load(transcript)?, *agent)))
            }
            AgentPolicy::Human => replay_all
                .as_ref()
                .map(|records| Box::new(ReplayAgent::new(records.clone(), i)) as Box<dyn Forecaster>),
        };
        slots.push(slot);
    }
    Ok(slots)
}

/// A session in progress, optionally backed by a transcript file.
pub struct SessionEngine {
    config: SessionConfig,
    state: SessionState,
    agents: Slots,
    writer: Option<TranscriptWriter>,
    records: Vec<RoundRecord>,
    last_checksum: String,
}

impl std::fmt::Debug for SessionEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SessionEngine")
            .field("session_id", &self.config.session_id)
            .field("round", &self.state.current_round)
            .field("status", &self.state.status)
            .finish()
    }
}

impl SessionEngine {
    /// Validates the config, resolves every agent and writes the transcript
    /// header (when `transcript` is given).
    pub fn create(config: SessionConfig, transcript: Option<&Path>) -> Result<Self, SessionError> {
        config.validate()?;
        let agents = build_agents(&config)?;
        let header = TranscriptHeader::new(config.clone());
        let (writer, last_checksum) = match transcript {
            Some(path) => {
                let (w, sum) = TranscriptWriter::create(path, &header)?;
                (Some(w), sum)
            }
            None => {
                let line = serde_json::to_string(&header).expect("header serializes");
                (None, crate::transcript::header_checksum(&line))
            }
        };
        Ok(Self {
            state: SessionState::new(config.agents.len()),
            config,
            agents,
            writer,
            records: Vec::new(),
            last_checksum,
        })
    }

    /// Reopens a verified transcript prefix and continues appending to it.
    pub fn resume(path: &Path) -> Result<Self, SessionError> {
        let transcript = read_transcript(path)?;
        Self::from_transcript(path, transcript)
    }

    fn from_transcript(path: &Path, transcript: Transcript) -> Result<Self, SessionError> {
        let Transcript {
            header,
            records,
            last_checksum,
            byte_len,
        } = transcript;
        let config = header.config;
        config.validate()?;
        let mut state = SessionState::new(config.agents.len());
        for r in &records {
            state.apply(r);
        }
        let complete = records.len() >= config.rounds;
        let mut agents = if complete {
            std::iter::repeat_with(|| None).take(config.agents.len()).collect()
        } else {
            build_agents(&config)?
        };
        for (i, slot) in agents.iter_mut().enumerate() {
            if let Some(agent) = slot {
                agent.restore(&records, i);
            }
        }
        if complete {
            state.status = SessionStatus::Complete;
        }
        let writer = if complete {
            None
        } else {
            Some(TranscriptWriter::append_at(path, byte_len)?)
        };
        Ok(Self {
            config,
            state,
            agents,
            writer,
            records,
            last_checksum,
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn records(&self) -> &[RoundRecord] {
        &self.records
    }

    pub fn is_complete(&self) -> bool {
        self.state.status == SessionStatus::Complete
    }

    pub fn transcript_path(&self) -> Option<&Path> {
        self.writer.as_ref().map(|w| w.path())
    }

    /// Round that the next call to [`play_round`](Self::play_round) closes.
    pub fn open_round(&self) -> usize {
        self.state.current_round + 1
    }

    /// Slots whose forecasts must be supplied from outside.
    pub fn external_slots(&self) -> Vec<usize> {
        self.agents
            .iter()
            .enumerate()
            .filter(|(_, a)| a.is_none())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn view_for(&self, agent: usize) -> AgentView {
        self.state.view_for(agent, self.config.market.feedback)
    }

    /// Plays the open round. `external` must hold a forecast for every slot
    /// in [`external_slots`](Self::external_slots).
    pub fn play_round(&mut self, external: &BTreeMap<usize, f64>) -> Result<&RoundRecord, SessionError> {
        match self.state.status {
            SessionStatus::Running => {}
            SessionStatus::Complete => return Err(SessionError::NotRunning("completed")),
            SessionStatus::Aborted => return Err(SessionError::NotRunning("aborted")),
        }
        match self.close_round(external) {
            Ok(()) => Ok(self.records.last().expect("record appended")),
            Err(e) => {
                if !matches!(e, SessionError::MissingHumanForecasts { .. }) {
                    self.state.status = SessionStatus::Aborted;
                }
                Err(e)
            }
        }
    }

    fn close_round(&mut self, external: &BTreeMap<usize, f64>) -> Result<(), SessionError> {
        let round = self.open_round();
        let missing: Vec<usize> = self
            .external_slots()
            .into_iter()
            .filter(|i| !external.contains_key(i))
            .collect();
        if !missing.is_empty() {
            return Err(SessionError::MissingHumanForecasts { round, missing });
        }
        let views: Vec<AgentView> = (0..self.agents.len()).map(|i| self.view_for(i)).collect();

        let outputs: Vec<Result<AgentOutput, AgentError>> = self
            .agents
            .par_iter_mut()
            .zip(views.par_iter())
            .enumerate()
            .map(|(i, (slot, view))| match slot {
                Some(agent) => agent.forecast(view),
                None => Ok(Forecast::new(external[&i]).into()),
            })
            .collect();
        let mut outputs = outputs.into_iter().collect::<Result<Vec<_>, _>>()?;
        for (i, o) in outputs.iter().enumerate() {
            if !(o.forecast.value.is_finite() && o.forecast.value > 0.0) {
                return Err(AgentError::InvalidForecast {
                    agent: i,
                    reason: format!("forecast {} is not positive", o.forecast.value),
                }
                .into());
            }
        }

        let values: Vec<f64> = outputs.iter().map(|o| o.forecast.value).collect();
        let mean = mean_forecast(&values)?;
        let mut rng = SplitMix64::derive(self.config.seed, &self.config.session_id, "market", round as u64);
        let noise = draw_noise(&self.config.market, &mut rng);
        let point = price_from_mean(&self.config.market, round, mean, noise)?;

        let agents = outputs
            .iter_mut()
            .enumerate()
            .map(|(i, o)| AgentRoundEntry {
                agent: i,
                prediction: o.forecast.value,
                reasoning: std::mem::take(&mut o.forecast.reasoning),
                prompt_digest: o.prompt_digest.take(),
                retry_count: o.retry_count,
                correction: o.forecast.correction,
                earnings_delta: earnings(point.price, o.forecast.value),
                exchange: o.exchange.take(),
            })
            .collect();
        let mut record = RoundRecord {
            kind: "round".into(),
            round,
            agents,
            mean_forecast: mean,
            noise_draw: point.noise_draw,
            price_pre_clamp: point.pre_clamp,
            price: point.price,
            checksum: String::new(),
        };
        record.checksum = record_checksum(&record, &self.last_checksum);
        if let Some(w) = self.writer.as_mut() {
            w.append(&record)?;
        }
        self.last_checksum = record.checksum.clone();
        self.state.apply(&record);
        for (i, slot) in self.agents.iter_mut().enumerate() {
            if let Some(agent) = slot {
                agent.observe(&record, i);
            }
        }
        log::debug!("round {round}: price {:.4}", record.price);
        self.records.push(record);
        if self.state.current_round >= self.config.rounds {
            self.state.status = SessionStatus::Complete;
        }
        Ok(())
    }

    /// Plays every remaining round; requires a session without human slots.
    /// `on_round` sees each record as soon as it is durable.
    pub fn run_to_end(&mut self, mut on_round: impl FnMut(&RoundRecord)) -> Result<(), SessionError> {
        let none = BTreeMap::new();
        while self.state.status == SessionStatus::Running {
            let record = self.play_round(&none)?;
            on_round(record);
        }
        Ok(())
    }
}

/// Runs a complete session. With `transcript` set, every round is synced
/// to that file before the next one starts; on failure the partial file
/// stays valid and resumable.
pub fn run_session(config: SessionConfig, transcript: Option<&Path>) -> Result<SessionEngine, SessionError> {
    let mut engine = SessionEngine::create(config, transcript)?;
    engine.run_to_end(|_| {})?;
    Ok(engine)
}

/// Resumes a transcript prefix and plays the remaining rounds. A complete
/// transcript is returned unchanged.
pub fn resume_session(transcript: &Path) -> Result<SessionEngine, SessionError> {
    let mut engine = SessionEngine::resume(transcript)?;
    engine.run_to_end(|_| {})?;
    Ok(engine)
}

/// Config that re-plays `transcript`: same header, every LLM and human slot
/// re-emitting its recorded forecasts.
pub fn replay_config(transcript: &Path) -> Result<SessionConfig, SessionError> {
    let t = read_transcript(transcript)?;
    let mut config = t.header.config;
    config.backend = Some(BackendConfig::Replay {
        transcript: transcript.to_path_buf(),
    });
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{HeuristicSpec, Preset};
    use crate::llm::LlmAgentConfig;
    use crate::market::{FeedbackType, MarketSpec};

    fn scripted(feedback: FeedbackType, preset: Preset, noise: f64) -> SessionConfig {
        SessionConfig::new(
            "t",
            11,
            MarketSpec::new(feedback).with_noise_sd(noise),
            vec![AgentPolicy::Heuristic(HeuristicSpec::preset(preset)); 6],
        )
    }

    #[test]
    fn fundamentalists_hold_the_equilibrium() {
        for fb in [FeedbackType::Positive, FeedbackType::Negative] {
            let engine = run_session(scripted(fb, Preset::Fundamentalist, 0.0), None).unwrap();
            assert!(engine.is_complete());
            assert!(engine.state().price_series().iter().all(|&p| p == 60.0));
            assert!(engine.state().earnings.iter().all(|&e| e == 1300.0 * 50.0));
        }
    }

    #[test]
    fn naive_negative_matches_iteration() {
        let mut c = scripted(FeedbackType::Negative, Preset::Naive, 0.0);
        c.agents = vec![AgentPolicy::Heuristic(HeuristicSpec::preset(Preset::Naive).initial(39.0)); 6];
        let engine = run_session(c, None).unwrap();
        let prices = engine.state().price_series();
        let mut p = 80.0f64;
        for &got in &prices {
            assert!((got - p).abs() < 1e-9, "{got} vs {p}");
            p = 20.0 * (123.0 - p) / 21.0;
        }
        assert!((prices[1] - 40.952_380_952).abs() < 1e-6);
        assert!((prices[2] - 78.140_589_569).abs() < 1e-6);
    }

    #[test]
    fn state_lengths_and_accounting() {
        let engine = run_session(scripted(FeedbackType::Positive, Preset::Adaptive, 0.5).with_rounds(12), None).unwrap();
        let s = engine.state();
        assert_eq!(s.current_round, 12);
        assert_eq!(s.prices.len(), 12);
        for (i, f) in s.forecasts.iter().enumerate() {
            assert_eq!(f.len(), 12);
            let mut total = 0.0;
            for (t, fc) in f.iter().enumerate() {
                total += earnings(s.prices[t].price, fc.value);
            }
            assert_eq!(total, s.earnings[i]);
        }
    }

    #[test]
    fn completed_session_rejects_more_rounds() {
        let mut engine = run_session(scripted(FeedbackType::Negative, Preset::Naive, 0.5).with_rounds(2), None).unwrap();
        assert!(matches!(engine.play_round(&BTreeMap::new()), Err(SessionError::NotRunning(_))));
    }

    #[test]
    fn human_slots_require_external_forecasts() {
        let mut c = scripted(FeedbackType::Negative, Preset::Naive, 0.5);
        c.agents[3] = AgentPolicy::Human;
        let mut engine = SessionEngine::create(c, None).unwrap();
        assert_eq!(engine.external_slots(), vec![3]);
        let err = engine.play_round(&BTreeMap::new()).unwrap_err();
        assert!(matches!(err, SessionError::MissingHumanForecasts { round: 1, .. }));
        assert_eq!(engine.state().status, SessionStatus::Running);
        let record = engine.play_round(&BTreeMap::from([(3, 55.5)])).unwrap();
        assert_eq!(record.agents[3].prediction, 55.5);
    }

    #[test]
    fn missing_credential_fails_before_round_one() {
        let mut c = scripted(FeedbackType::Negative, Preset::Naive, 0.5);
        c.agents[0] = AgentPolicy::Llm(LlmAgentConfig::new("gpt-4o", 0.7, 3));
        c.backend = Some(BackendConfig::Live {
            endpoint: "http://127.0.0.1:9".into(),
            api_key_env: "LTF_SESSION_TEST_UNSET_KEY".into(),
        });
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let err = SessionEngine::create(c, Some(&path)).unwrap_err();
        assert!(matches!(err, SessionError::Backend(BackendError::MissingCredential(_))));
        assert!(!path.exists());
    }

    #[test]
    fn agent_failure_aborts_and_keeps_prefix() {
        let dir = tempfile::tempdir().unwrap();
        let short = dir.path().join("short.jsonl");
        run_session(scripted(FeedbackType::Negative, Preset::Naive, 0.5).with_rounds(3), Some(&short)).unwrap();
        let mut c = scripted(FeedbackType::Negative, Preset::Naive, 0.5).with_rounds(5);
        c.session_id = "replayer".into();
        c.agents[1] = AgentPolicy::Replay { transcript: short.clone(), agent: 1 };
        let out = dir.path().join("out.jsonl");
        let mut engine = SessionEngine::create(c, Some(&out)).unwrap();
        let err = engine.run_to_end(|_| {}).unwrap_err();
        assert!(matches!(err, SessionError::Agent(AgentError::ReplayExhausted { round: 4, agent: 1 })));
        assert_eq!(engine.state().status, SessionStatus::Aborted);
        let t = read_transcript(&out).unwrap();
        assert_eq!(t.records.len(), 3);
    }
}
