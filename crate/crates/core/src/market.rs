//! Price-feedback laws, the quadratic payoff and market noise.
//!
//! Everything here is a pure function of its inputs. The slope and the payoff
//! scale are kept as numerator/denominator pairs and evaluated as
//! `num * x / den` so that equilibrium and table values come out exact.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::SplitMix64;

/// Maximum per-round payoff in points.
pub const MAX_EARNINGS: f64 = 1300.0;
/// Payoff divisor; a forecast error of `sqrt(EARNINGS_DIVISOR)` = 7 pays nothing.
pub const EARNINGS_DIVISOR: f64 = 49.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarketError {
    #[error("forecast vector is empty")]
    EmptyForecasts,
    #[error("forecast {index} is not finite ({value})")]
    NonFiniteForecast { index: usize, value: f64 },
    #[error("noise draw is not finite ({0})")]
    NonFiniteNoise(f64),
    #[error("invalid market spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeedbackType {
    Positive,
    Negative,
}

impl FeedbackType {
    pub fn as_str(self) -> &'static str {
        match self {
            FeedbackType::Positive => "positive",
            FeedbackType::Negative => "negative",
        }
    }

    /// Cross-agent average trend coefficient observed in the laboratory.
    pub fn human_benchmark_beta(self) -> f64 {
        match self {
            FeedbackType::Positive => 0.67,
            FeedbackType::Negative => 0.0,
        }
    }
}

impl fmt::Display for FeedbackType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeedbackType {
    type Err = MarketError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "positive" => Ok(FeedbackType::Positive),
            "negative" => Ok(FeedbackType::Negative),
            other => Err(MarketError::InvalidSpec(format!(
                "unknown feedback type {other:?} (expected \"positive\" or \"negative\")"
            ))),
        }
    }
}

fn default_slope_numerator() -> f64 {
    20.0
}
fn default_slope_denominator() -> f64 {
    21.0
}
fn default_positive_shift() -> f64 {
    3.0
}
fn default_negative_anchor() -> f64 {
    123.0
}
fn default_equilibrium() -> f64 {
    60.0
}
fn default_noise_sd() -> f64 {
    0.5
}

/// Constants of one market. Every field except `feedback` has the laboratory default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketSpec {
    pub feedback: FeedbackType,
    #[serde(default = "default_slope_numerator")]
    pub slope_numerator: f64,
    #[serde(default = "default_slope_denominator")]
    pub slope_denominator: f64,
    #[serde(default = "default_positive_shift")]
    pub positive_shift: f64,
    #[serde(default = "default_negative_anchor")]
    pub negative_anchor: f64,
    #[serde(default = "default_equilibrium")]
    pub equilibrium: f64,
    /// Standard deviation of the additive price shock.
    #[serde(default = "default_noise_sd")]
    pub noise_sd: f64,
    #[serde(default)]
    pub price_floor: f64,
}

impl MarketSpec {
    pub fn new(feedback: FeedbackType) -> Self {
        Self {
            feedback,
            slope_numerator: default_slope_numerator(),
            slope_denominator: default_slope_denominator(),
            positive_shift: default_positive_shift(),
            negative_anchor: default_negative_anchor(),
            equilibrium: default_equilibrium(),
            noise_sd: default_noise_sd(),
            price_floor: 0.0,
        }
    }

    pub fn with_noise_sd(mut self, sd: f64) -> Self {
        self.noise_sd = sd;
        self
    }

    pub fn slope(&self) -> f64 {
        self.slope_numerator / self.slope_denominator
    }

    pub fn validate(&self) -> Result<(), MarketError> {
        let all = [
            ("slope_numerator", self.slope_numerator),
            ("slope_denominator", self.slope_denominator),
            ("positive_shift", self.positive_shift),
            ("negative_anchor", self.negative_anchor),
            ("equilibrium", self.equilibrium),
            ("noise_sd", self.noise_sd),
            ("price_floor", self.price_floor),
        ];
        if let Some((name, v)) = all.iter().find(|(_, v)| !v.is_finite()) {
            return Err(MarketError::InvalidSpec(format!("{name} is not finite ({v})")));
        }
        let slope = self.slope();
        if !(slope > 0.0 && slope < 1.0) {
            return Err(MarketError::InvalidSpec(format!(
                "slope {}/{} must lie strictly between 0 and 1",
                self.slope_numerator, self.slope_denominator
            )));
        }
        if self.noise_sd < 0.0 {
            return Err(MarketError::InvalidSpec("noise_sd must be >= 0".into()));
        }
        if self.price_floor < 0.0 {
            return Err(MarketError::InvalidSpec("price_floor must be >= 0".into()));
        }
        Ok(())
    }

    /// Noiseless, unclamped price for a given mean forecast.
    pub fn deterministic_price(&self, mean_forecast: f64) -> f64 {
        let inner = match self.feedback {
            FeedbackType::Positive => mean_forecast + self.positive_shift,
            FeedbackType::Negative => self.negative_anchor - mean_forecast,
        };
        self.slope_numerator * inner / self.slope_denominator
    }
}

/// One realized market price.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PricePoint {
    pub round: usize,
    pub price: f64,
    pub noise_draw: f64,
    /// Price before the floor was applied.
    pub pre_clamp: f64,
}

/// Arithmetic mean, accumulated left to right in `f64`.
pub fn mean_forecast(forecasts: &[f64]) -> Result<f64, MarketError> {
    if forecasts.is_empty() {
        return Err(MarketError::EmptyForecasts);
    }
    if let Some((index, &value)) = forecasts.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(MarketError::NonFiniteForecast { index, value });
    }
    Ok(forecasts.iter().sum::<f64>() / forecasts.len() as f64)
}

/// Realized price for round `round` given every agent's forecast and the noise draw.
pub fn realized_price(
    spec: &MarketSpec,
    round: usize,
    forecasts: &[f64],
    noise: f64,
) -> Result<PricePoint, MarketError> {
    let mean = mean_forecast(forecasts)?;
    price_from_mean(spec, round, mean, noise)
}

/// Same as [`realized_price`] but from an already-computed mean forecast.
pub fn price_from_mean(
    spec: &MarketSpec,
    round: usize,
    mean: f64,
    noise: f64,
) -> Result<PricePoint, MarketError> {
    if !noise.is_finite() {
        return Err(MarketError::NonFiniteNoise(noise));
    }
    let pre_clamp = spec.deterministic_price(mean) + noise;
    Ok(PricePoint {
        round,
        price: pre_clamp.max(spec.price_floor),
        noise_draw: noise,
        pre_clamp,
    })
}

/// Draws the additive price shock for one round.
pub fn draw_noise(spec: &MarketSpec, rng: &mut SplitMix64) -> f64 {
    rng.next_normal(spec.noise_sd)
}

/// Per-round payoff: `max(1300 - 1300/49 * (realized - forecast)^2, 0)`.
pub fn earnings(realized: f64, forecast: f64) -> f64 {
    let err = realized - forecast;
    (MAX_EARNINGS - MAX_EARNINGS * (err * err) / EARNINGS_DIVISOR).max(0.0)
}

/// Rounds to `decimals` places for display (half away from zero).
pub fn round_to(value: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    (value * scale).round() / scale
}
