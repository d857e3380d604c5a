//! Offline chat backends for tests, sweeps and dry runs.

use std::collections::VecDeque;
use std::sync::Mutex;

use super::{parse_market_data, BackendError, ChatBackend, ChatRequest, Role};
use crate::agents::{heuristic_forecast, AgentView, HeuristicParams, HeuristicSpec};
use crate::market::{round_to, FeedbackType};
use crate::rng::{fnv1a64, SplitMix64};

fn reply_json(reasoning: &str, value: f64) -> String {
    serde_json::json!({ "reasoning": reasoning, "predictedValue": value }).to_string()
}

fn last_user_message(request: &ChatRequest) -> &str {
    request
        .messages
        .iter()
        .rev()
        .find(|m| m.role == Role::User)
        .map(|m| m.content.as_str())
        .unwrap_or("")
}

fn infer_feedback(request: &ChatRequest) -> FeedbackType {
    let importer = request
        .messages
        .iter()
        .any(|m| m.role == Role::System && m.content.contains("importer"));
    if importer {
        FeedbackType::Negative
    } else {
        FeedbackType::Positive
    }
}

/// Answers like a scripted heuristic agent by reading the market data out of
/// the prompt. Draws are seeded by the request hash, so equal requests get
/// equal answers. Forecast noise grows with the request temperature.
#[derive(Debug, Clone)]
pub struct HeuristicMock {
    params: HeuristicParams,
    initial: Option<f64>,
    temperature_noise: f64,
}

impl HeuristicMock {
    pub fn new(spec: &HeuristicSpec, temperature_noise: f64) -> Result<Self, String> {
        if !temperature_noise.is_finite() || temperature_noise < 0.0 {
            return Err(format!("temperature_noise {temperature_noise} must be >= 0"));
        }
        Ok(Self {
            params: spec.params()?,
            initial: spec.initial_forecast,
            temperature_noise,
        })
    }
}

impl ChatBackend for HeuristicMock {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let body = serde_json::to_vec(request).expect("request serializes");
        let mut rng = SplitMix64::new(fnv1a64(&body));
        let feedback = infer_feedback(request);
        let view = match parse_market_data(last_user_message(request)) {
            Some(data) => AgentView {
                round: data.prices.len() + 1,
                price_history: data.prices,
                own_predictions: data.predictions,
                total_earnings: data.total_earnings,
                feedback,
            },
            None => AgentView::from_chronological(&[], &[], 0.0, feedback),
        };
        let params = self
            .params
            .with_noise(self.params.noise_sd + self.temperature_noise * request.temperature.max(0.0));
        let forecast = heuristic_forecast(&params, &view, self.initial, &mut rng);
        let value = round_to(forecast.value, 2).max(0.01);
        let reasoning = match view.price_lag(1) {
            Some(last) => format!("The last price was {last:.2}; my rule points to {value:.2}."),
            None => "No history yet, so I start from an initial guess.".to_string(),
        };
        Ok(reply_json(&reasoning, value))
    }
}

/// Returns `values[round - 1]` (or the last value once exhausted).
#[derive(Debug, Clone)]
pub struct FixedValuesMock {
    values: Vec<f64>,
}

impl FixedValuesMock {
    pub fn new(values: Vec<f64>) -> Self {
        assert!(!values.is_empty(), "fixed-values mock needs at least one value");
        Self { values }
    }
}

impl ChatBackend for FixedValuesMock {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let round = parse_market_data(last_user_message(request))
            .map(|d| d.prices.len() + 1)
            .unwrap_or(1);
        let value = self.values[(round - 1).min(self.values.len() - 1)];
        Ok(reply_json("fixed", value))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MockResponse {
    Text(String),
    TransportError(String),
}

impl MockResponse {
    pub fn text(s: impl Into<String>) -> Self {
        MockResponse::Text(s.into())
    }

    pub fn transport_error(message: impl Into<String>) -> Self {
        MockResponse::TransportError(message.into())
    }
}

/// Plays back queued responses and records every request. The final
/// response repeats once the queue is down to one entry.
#[derive(Debug)]
pub struct ScriptedMock {
    queue: Mutex<VecDeque<MockResponse>>,
    requests: Mutex<Vec<ChatRequest>>,
}

impl ScriptedMock {
    pub fn new(responses: Vec<MockResponse>) -> Self {
        assert!(!responses.is_empty(), "scripted mock needs at least one response");
        Self {
            queue: Mutex::new(responses.into()),
            requests: Mutex::new(Vec::new()),
        }
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.requests.lock().expect("mock lock").clone()
    }
}

impl ChatBackend for ScriptedMock {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        self.requests.lock().expect("mock lock").push(request.clone());
        let mut queue = self.queue.lock().expect("mock lock");
        let next = if queue.len() > 1 {
            queue.pop_front().expect("non-empty")
        } else {
            queue.front().cloned().expect("non-empty")
        };
        match next {
            MockResponse::Text(t) => Ok(t),
            MockResponse::TransportError(message) => Err(BackendError::Transport {
                message,
                retryable: true,
            }),
        }
    }
}
