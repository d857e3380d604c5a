use super::{AgentError, AgentOutput, AgentView, Forecast, Forecaster};
use crate::transcript::RoundRecord;

/// Stored forecast of `agent` in `round`, exactly as recorded.
pub fn replay_forecast(
    records: &[RoundRecord],
    round: usize,
    agent: usize,
) -> Result<Forecast, AgentError> {
    records
        .iter()
        .find(|r| r.round == round)
        .and_then(|r| r.agents.iter().find(|a| a.agent == agent))
        .map(|entry| Forecast {
            value: entry.prediction,
            reasoning: entry.reasoning.clone(),
            correction: entry.correction,
        })
        .ok_or(AgentError::ReplayExhausted { round, agent })
}

/// Re-emits one agent's recorded forecasts.
#[derive(Debug, Clone)]
pub struct ReplayAgent {
    records: std::sync::Arc<Vec<RoundRecord>>,
    agent: usize,
}

impl ReplayAgent {
    pub fn new(records: std::sync::Arc<Vec<RoundRecord>>, agent: usize) -> Self {
        Self { records, agent }
    }
}

impl Forecaster for ReplayAgent {
    fn forecast(&mut self, view: &AgentView) -> Result<AgentOutput, AgentError> {
        let forecast = replay_forecast(&self.records, view.round, self.agent)?;
        let entry = self
            .records
            .iter()
            .find(|r| r.round == view.round)
            .and_then(|r| r.agents.iter().find(|a| a.agent == self.agent));
        Ok(AgentOutput {
            forecast,
            prompt_digest: entry.and_then(|e| e.prompt_digest.clone()),
            retry_count: entry.map(|e| e.retry_count).unwrap_or(0),
            exchange: entry.and_then(|e| e.exchange.clone()),
        })
    }

    fn kind(&self) -> &'static str {
        "replay"
    }
}
