//! Forecast/price panels from transcripts or external CSV data.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use super::EstimationError;
use crate::market::FeedbackType;
use crate::session::{AgentPolicy, SessionConfig};
use crate::transcript::Transcript;

/// The experimental cell a session belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub policy: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    pub feedback: FeedbackType,
}

impl Condition {
    pub fn new(policy: impl Into<String>, feedback: FeedbackType) -> Self {
        Self {
            policy: policy.into(),
            memory: None,
            temperature: None,
            feedback,
        }
    }

    /// Stable identifier, e.g. `llm:gpt-4o|m3|t0.7|negative`.
    pub fn key(&self) -> String {
        let mut parts = vec![self.policy.clone()];
        if let Some(m) = self.memory {
            parts.push(format!("m{m}"));
        }
        if let Some(t) = self.temperature {
            parts.push(format!("t{t}"));
        }
        parts.push(self.feedback.to_string());
        parts.join("|")
    }

    /// Cell of a session: the shared LLM settings when every agent is the
    /// same model, otherwise the distinct agent labels in slot order.
    pub fn of_config(config: &SessionConfig) -> Self {
        let feedback = config.market.feedback;
        let llm: Vec<_> = config
            .agents
            .iter()
            .filter_map(|a| match a {
                AgentPolicy::Llm(c) => Some(c),
                _ => None,
            })
            .collect();
        if llm.len() == config.agents.len() {
            let first = llm[0];
            let uniform = llm.iter().all(|c| {
                c.model_id == first.model_id
                    && c.memory_depth == first.memory_depth
                    && c.temperature == first.temperature
            });
            if uniform {
                return Self {
                    policy: format!("llm:{}", first.model_id),
                    memory: Some(first.memory_depth),
                    temperature: Some(first.temperature),
                    feedback,
                };
            }
        }
        let mut labels: Vec<String> = Vec::new();
        for a in &config.agents {
            let l = a.label();
            if !labels.contains(&l) {
                labels.push(l);
            }
        }
        Self::new(labels.join("+"), feedback)
    }
}

/// Prices and per-agent forecasts of one session, chronological.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub session_id: String,
    pub condition: Condition,
    pub prices: Vec<f64>,
    pub forecasts: Vec<Vec<f64>>,
}

impl Panel {
    pub fn from_transcript(t: &Transcript) -> Self {
        Self {
            session_id: t.header.config.session_id.clone(),
            condition: Condition::of_config(&t.header.config),
            prices: t.prices(),
            forecasts: t.forecasts_by_agent(),
        }
    }

    pub fn rounds(&self) -> usize {
        self.prices.len()
    }

    pub fn n_agents(&self) -> usize {
        self.forecasts.len()
    }

    pub fn validate(&self) -> Result<(), EstimationError> {
        if self.forecasts.is_empty() {
            return Err(EstimationError::Inconsistent(format!("session {} has no agents", self.session_id)));
        }
        if let Some((i, _)) = self.forecasts.iter().enumerate().find(|(_, f)| f.len() != self.prices.len()) {
            return Err(EstimationError::Inconsistent(format!(
                "session {}: agent {i} has {} forecasts for {} prices",
                self.session_id,
                self.forecasts[i].len(),
                self.prices.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    #[serde(default)]
    session: Option<String>,
    #[serde(default)]
    condition: Option<String>,
    #[serde(default)]
    feedback: Option<FeedbackType>,
    round: usize,
    agent: usize,
    forecast: f64,
    price: f64,
}

/// Reads long-format data with columns `round, agent, forecast, price` and
/// optional `session`, `condition`, `feedback`. Rounds start at 1 and agents
/// at 0; every agent needs a forecast in every round of its session.
pub fn read_panel_csv(reader: impl Read, default_feedback: Option<FeedbackType>) -> Result<Vec<Panel>, EstimationError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    type Cell = (Option<String>, Option<FeedbackType>, BTreeMap<usize, f64>, BTreeMap<(usize, usize), f64>);
    let mut sessions: BTreeMap<String, Cell> = BTreeMap::new();
    for (line, row) in rdr.deserialize::<CsvRow>().enumerate() {
        let row = row.map_err(|e| EstimationError::Csv(format!("row {}: {e}", line + 2)))?;
        let bad = |m: String| EstimationError::Csv(format!("row {}: {m}", line + 2));
        if row.round == 0 {
            return Err(bad("rounds start at 1".into()));
        }
        if !row.forecast.is_finite() || !row.price.is_finite() {
            return Err(bad("non-finite value".into()));
        }
        let id = row.session.unwrap_or_else(|| "human".to_string());
        let entry = sessions
            .entry(id)
            .or_insert_with(|| (None, None, BTreeMap::new(), BTreeMap::new()));
        if entry.0.is_none() {
            entry.0 = row.condition;
        }
        if let Some(fb) = row.feedback {
            if entry.1.is_some_and(|f| f != fb) {
                return Err(bad("feedback changes within a session".into()));
            }
            entry.1 = Some(fb);
        }
        if let Some(&p) = entry.2.get(&row.round) {
            if p != row.price {
                return Err(bad(format!("round {} has conflicting prices {p} and {}", row.round, row.price)));
            }
        }
        entry.2.insert(row.round, row.price);
        if entry.3.insert((row.agent, row.round), row.forecast).is_some() {
            return Err(bad(format!("duplicate forecast for agent {} round {}", row.agent, row.round)));
        }
    }

    let mut panels = Vec::new();
    for (id, (condition, feedback, prices, forecasts)) in sessions {
        let feedback = feedback.or(default_feedback).ok_or_else(|| {
            EstimationError::Csv(format!("session {id}: no feedback column and no default feedback given"))
        })?;
        let rounds = prices.len();
        if prices.keys().copied().ne(1..=rounds) {
            return Err(EstimationError::Csv(format!("session {id}: rounds are not contiguous from 1")));
        }
        let n_agents = forecasts.keys().map(|(a, _)| a + 1).max().unwrap_or(0);
        let mut series = vec![Vec::with_capacity(rounds); n_agents];
        for (agent, s) in series.iter_mut().enumerate() {
            for round in 1..=rounds {
                let v = forecasts.get(&(agent, round)).ok_or_else(|| {
                    EstimationError::Csv(format!("session {id}: agent {agent} has no forecast for round {round}"))
                })?;
                s.push(*v);
            }
        }
        panels.push(Panel {
            condition: Condition::new(condition.unwrap_or_else(|| "human".into()), feedback),
            session_id: id,
            prices: prices.into_values().collect(),
            forecasts: series,
        });
    }
    Ok(panels)
}
