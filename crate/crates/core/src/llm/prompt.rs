use serde::{Deserialize, Serialize};

use super::{ChatMessage, LlmAgentConfig};
use crate::agents::AgentView;
use crate::market::FeedbackType;

/// Version of the instruction assets and the market-data message layout.
pub const PROMPT_VERSION: &str = "eight-system-messages/v1";

/// Round-1 instruction when no market history exists yet (default bounds).
pub const FIRST_ROUND_MESSAGE: &str =
    "This is period 1. No market information is available yet. Please guess an initial price between 1 and 100.";

const NEGATIVE_ASSET: &str = include_str!("../../assets/prompts/negative.json");
const POSITIVE_ASSET: &str = include_str!("../../assets/prompts/positive.json");
const NEGATIVE_INSTRUCTIONS: &str = include_str!("../../assets/instructions/negative.txt");
const POSITIVE_INSTRUCTIONS: &str = include_str!("../../assets/instructions/positive.txt");

#[derive(Deserialize)]
struct PromptAsset {
    system: Vec<String>,
}

/// The eight system messages for `feedback`, with the horizon filled in.
pub fn system_messages(feedback: FeedbackType, rounds: usize) -> Vec<String> {
    let raw = match feedback {
        FeedbackType::Negative => NEGATIVE_ASSET,
        FeedbackType::Positive => POSITIVE_ASSET,
    };
    let asset: PromptAsset = serde_json::from_str(raw).expect("bundled prompt asset is valid JSON");
    asset
        .system
        .into_iter()
        .map(|m| m.replace("{rounds}", &rounds.to_string()))
        .collect()
}

/// Participant instructions for human sessions.
pub fn instruction_text(feedback: FeedbackType, rounds: usize) -> String {
    let raw = match feedback {
        FeedbackType::Negative => NEGATIVE_INSTRUCTIONS,
        FeedbackType::Positive => POSITIVE_INSTRUCTIONS,
    };
    raw.replace("{rounds}", &rounds.to_string())
}

/// One remembered past round: the market-data message and the reply to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryItem {
    pub round: usize,
    pub user_message: String,
    pub reasoning: String,
    pub prediction: f64,
}

#[derive(Serialize)]
struct AssistantReply<'a> {
    reasoning: &'a str,
    #[serde(rename = "predictedValue")]
    predicted_value: f64,
}

fn assistant_content(item: &MemoryItem) -> String {
    serde_json::to_string(&AssistantReply {
        reasoning: &item.reasoning,
        predicted_value: item.prediction,
    })
    .expect("reply serializes")
}

fn format_series(values: &[f64], decimals: u32) -> String {
    let items: Vec<String> = values
        .iter()
        .map(|v| format!("{:.*}", decimals as usize, v))
        .collect();
    format!("[{}]", items.join(", "))
}

/// `market prices: [...]; your predictions: [...]; Total earnings: E`, newest first.
pub fn render_market_data(view: &AgentView, decimals: u32) -> String {
    format!(
        "market prices: {}; your predictions: {}; Total earnings: {:.0}",
        format_series(&view.price_history, decimals),
        format_series(&view.own_predictions, decimals),
        view.total_earnings
    )
}

fn first_round_message(bounds: (f64, f64)) -> String {
    if bounds == (1.0, 100.0) {
        FIRST_ROUND_MESSAGE.to_string()
    } else {
        format!(
            "This is period 1. No market information is available yet. Please guess an initial price between {} and {}.",
            bounds.0, bounds.1
        )
    }
}

/// Builds the full message list for one query: instructions, at most
/// `memory_depth` remembered rounds (oldest first), then the current
/// market-data message. The price and prediction series are always complete.
pub fn build_prompt(
    config: &LlmAgentConfig,
    view: &AgentView,
    memory: &[MemoryItem],
    rounds: usize,
    decimals: u32,
) -> Vec<ChatMessage> {
    build_prompt_with_bounds(config, view, memory, rounds, decimals, (1.0, 100.0))
}

pub(crate) fn build_prompt_with_bounds(
    config: &LlmAgentConfig,
    view: &AgentView,
    memory: &[MemoryItem],
    rounds: usize,
    decimals: u32,
    first_round_bounds: (f64, f64),
) -> Vec<ChatMessage> {
    let mut messages: Vec<ChatMessage> = system_messages(view.feedback, rounds)
        .into_iter()
        .map(ChatMessage::system)
        .collect();
    let keep = config.memory_depth.min(memory.len());
    for item in &memory[memory.len() - keep..] {
        if !item.user_message.is_empty() {
            messages.push(ChatMessage::user(item.user_message.clone()));
        }
        messages.push(ChatMessage::assistant(assistant_content(item)));
    }
    let current = if view.round == 1 {
        first_round_message(first_round_bounds)
    } else {
        render_market_data(view, decimals)
    };
    messages.push(ChatMessage::user(current));
    messages
}

/// Parsed market-data message (series newest first).
#[derive(Debug, Clone, PartialEq)]
pub struct MarketData {
    pub prices: Vec<f64>,
    pub predictions: Vec<f64>,
    pub total_earnings: f64,
}

fn parse_series(s: &str) -> Option<Vec<f64>> {
    let inner = s.trim().strip_prefix('[')?.strip_suffix(']')?;
    if inner.trim().is_empty() {
        return Some(Vec::new());
    }
    inner.split(',').map(|x| x.trim().parse::<f64>().ok()).collect()
}

/// Inverse of [`render_market_data`]; `None` for any other text.
pub fn parse_market_data(text: &str) -> Option<MarketData> {
    let rest = text.trim().strip_prefix("market prices:")?;
    let (prices, rest) = rest.split_once("; your predictions:")?;
    let (predictions, earnings) = rest.split_once("; Total earnings:")?;
    Some(MarketData {
        prices: parse_series(prices)?,
        predictions: parse_series(predictions)?,
        total_earnings: earnings.trim().parse().ok()?,
    })
}
