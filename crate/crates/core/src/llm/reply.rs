use serde_json::Value;
use thiserror::Error;

/// Admissible range for a parsed forecast.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ForecastBounds {
    /// `lo <= v <= hi`.
    Closed(f64, f64),
    /// `v > 0`.
    Positive,
}

impl ForecastBounds {
    pub fn closed(lo: f64, hi: f64) -> Self {
        ForecastBounds::Closed(lo, hi)
    }

    pub fn positive() -> Self {
        ForecastBounds::Positive
    }

    pub fn contains(&self, v: f64) -> bool {
        match *self {
            ForecastBounds::Closed(lo, hi) => v >= lo && v <= hi,
            ForecastBounds::Positive => v > 0.0,
        }
    }
}

impl std::fmt::Display for ForecastBounds {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ForecastBounds::Closed(lo, hi) => write!(f, "[{lo}, {hi}]"),
            ForecastBounds::Positive => write!(f, "(0, inf)"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmReply {
    pub reasoning: String,
    pub predicted_value: f64,
    pub raw: String,
    /// Original value when it carried more than two decimals.
    pub normalized_from: Option<f64>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReplyError {
    #[error("reply is not a JSON object")]
    NotJson,
    #[error("reply has no 'predictedValue' key")]
    MissingValue,
    #[error("'predictedValue' is not numeric")]
    NotNumeric,
    #[error("'predictedValue' {value} is outside {bounds}")]
    OutOfBounds { value: f64, bounds: String },
}

fn json_object(raw: &str) -> Option<serde_json::Map<String, Value>> {
    let trimmed = raw.trim();
    if let Ok(Value::Object(map)) = serde_json::from_str::<Value>(trimmed) {
        return Some(map);
    }
    // A single fenced block, as some models insist on markdown.
    let start = trimmed.find("```")?;
    let after = &trimmed[start + 3..];
    let after = after.strip_prefix("json").unwrap_or(after);
    let end = after.find("```")?;
    match serde_json::from_str::<Value>(after[..end].trim()) {
        Ok(Value::Object(map)) => Some(map),
        _ => None,
    }
}

fn numeric(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse::<f64>().ok(),
        _ => None,
    }
    .filter(|x| x.is_finite())
}

/// Validates a raw model reply. Values with more than two decimals are
/// rounded half-to-even and the original is kept in `normalized_from`.
pub fn parse_reply(raw: &str, bounds: ForecastBounds) -> Result<LlmReply, ReplyError> {
    let map = json_object(raw).ok_or(ReplyError::NotJson)?;
    let value = map.get("predictedValue").ok_or(ReplyError::MissingValue)?;
    let value = numeric(value).ok_or(ReplyError::NotNumeric)?;
    let rounded = (value * 100.0).round_ties_even() / 100.0;
    let normalized_from = (rounded != value).then_some(value);
    if !rounded.is_finite() || !bounds.contains(rounded) {
        return Err(ReplyError::OutOfBounds {
            value,
            bounds: bounds.to_string(),
        });
    }
    let reasoning = match map.get("reasoning") {
        Some(Value::String(s)) => s.clone(),
        Some(other) => other.to_string(),
        None => String::new(),
    };
    Ok(LlmReply {
        reasoning,
        predicted_value: rounded,
        raw: raw.to_string(),
        normalized_from,
    })
}
