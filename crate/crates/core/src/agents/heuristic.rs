use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{AgentError, AgentOutput, AgentView, Correction, Forecast, Forecaster};
use crate::rng::SplitMix64;

/// Replacement for non-positive scripted outputs.
pub const MIN_SCRIPTED_FORECAST: f64 = 0.01;

/// Named corners of the first-order heuristic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Fundamentalist,
    Naive,
    Obstinate,
    TrendFollower,
    TrendReverser,
    Adaptive,
}

impl Preset {
    pub const ALL: [Preset; 6] = [
        Preset::Fundamentalist,
        Preset::Naive,
        Preset::Obstinate,
        Preset::TrendFollower,
        Preset::TrendReverser,
        Preset::Adaptive,
    ];

    /// `(alpha1, alpha2, beta)`.
    pub fn coefficients(self) -> (f64, f64, f64) {
        match self {
            Preset::Fundamentalist => (0.0, 0.0, 0.0),
            Preset::Naive => (1.0, 0.0, 0.0),
            Preset::Obstinate => (0.0, 1.0, 0.0),
            Preset::TrendFollower => (0.0, 0.0, 1.0),
            Preset::TrendReverser => (0.0, 0.0, -1.0),
            Preset::Adaptive => (0.5, 0.5, 0.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Fundamentalist => "fundamentalist",
            Preset::Naive => "naive",
            Preset::Obstinate => "obstinate",
            Preset::TrendFollower => "trend_follower",
            Preset::TrendReverser => "trend_reverser",
            Preset::Adaptive => "adaptive",
        }
    }

    /// Strategy label used when classifying estimates.
    pub fn strategy(self) -> &'static str {
        match self {
            Preset::Fundamentalist => "fundamentalism",
            Preset::Naive => "naivety",
            Preset::Obstinate => "obstinacy",
            Preset::TrendFollower => "trend_following",
            Preset::TrendReverser => "trend_reversing",
            Preset::Adaptive => "adaptation",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown preset {s:?}"))
    }
}

fn default_anchor() -> f64 {
    60.0
}

/// Parameters of `e = a1*p[t-1] + a2*e[t-1] + (1-a1-a2)*anchor + b*(p[t-1]-p[t-2]) + nu`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeuristicParams {
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta: f64,
    #[serde(default = "default_anchor")]
    pub anchor: f64,
    /// Standard deviation of the idiosyncratic forecast noise `nu`.
    #[serde(default)]
    pub noise_sd: f64,
}

impl HeuristicParams {
    pub fn new(alpha1: f64, alpha2: f64, beta: f64) -> Self {
        Self {
            alpha1,
            alpha2,
            beta,
            anchor: default_anchor(),
            noise_sd: 0.0,
        }
    }

    pub fn preset(preset: Preset) -> Self {
        let (a1, a2, b) = preset.coefficients();
        Self::new(a1, a2, b)
    }

    pub fn with_noise(mut self, sd: f64) -> Self {
        self.noise_sd = sd;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [("alpha1", self.alpha1), ("alpha2", self.alpha2), ("beta", self.beta)] {
            if !v.is_finite() || !(-1.0..=1.0).contains(&v) {
                return Err(format!("{name} = {v} is outside [-1, 1]"));
            }
        }
        if !self.anchor.is_finite() || self.anchor <= 0.0 {
            return Err(format!("anchor = {} must be positive", self.anchor));
        }
        if !self.noise_sd.is_finite() || self.noise_sd < 0.0 {
            return Err(format!("noise_sd = {} must be >= 0", self.noise_sd));
        }
        Ok(())
    }

    /// Whether the rule can be evaluated on this view without bootstrapping.
    fn history_sufficient(&self, view: &AgentView) -> bool {
        let have = view.price_history.len();
        let needs_last_price = self.alpha1 != 0.0 || self.beta != 0.0;
        let needs_prev_price = self.beta != 0.0;
        let needs_own = self.alpha2 != 0.0;
        (!needs_last_price || have >= 1)
            && (!needs_prev_price || have >= 2)
            && (!needs_own || !view.own_predictions.is_empty())
    }

    /// The rule's deterministic part. Missing lags contribute nothing.
    pub fn deterministic_value(&self, view: &AgentView) -> f64 {
        let p1 = view.price_lag(1).unwrap_or(self.anchor);
        let p2 = view.price_lag(2).unwrap_or(p1);
        let e1 = view.own_lag(1).unwrap_or(self.anchor);
        self.alpha1 * p1
            + self.alpha2 * e1
            + (1.0 - self.alpha1 - self.alpha2) * self.anchor
            + self.beta * (p1 - p2)
    }
}

/// Heuristic agent entry in a session config: a preset, explicit
/// coefficients, or a preset with overrides.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeuristicSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_sd: Option<f64>,
    /// Fixed round-1 forecast instead of the uniform draw.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_forecast: Option<f64>,
}

impl HeuristicSpec {
    pub fn preset(preset: Preset) -> Self {
        Self {
            preset: Some(preset),
            ..Self::default()
        }
    }

    pub fn explicit(alpha1: f64, alpha2: f64, beta: f64) -> Self {
        Self {
            alpha1: Some(alpha1),
            alpha2: Some(alpha2),
            beta: Some(beta),
            ..Self::default()
        }
    }

    pub fn noise(mut self, sd: f64) -> Self {
        self.noise_sd = Some(sd);
        self
    }

    pub fn initial(mut self, value: f64) -> Self {
        self.initial_forecast = Some(value);
        self
    }

    pub fn params(&self) -> Result<HeuristicParams, String> {
        let (a1, a2, b) = match self.preset {
            Some(p) => p.coefficients(),
            None => match (self.alpha1, self.alpha2, self.beta) {
                (Some(a1), Some(a2), Some(b)) => (a1, a2, b),
                _ => {
                    return Err(
                        "heuristic agent needs a preset or all of alpha1, alpha2, beta".into(),
                    )
                }
            },
        };
        let params = HeuristicParams {
            alpha1: self.alpha1.unwrap_or(a1),
            alpha2: self.alpha2.unwrap_or(a2),
            beta: self.beta.unwrap_or(b),
            anchor: self.anchor.unwrap_or_else(default_anchor),
            noise_sd: self.noise_sd.unwrap_or(0.0),
        };
        params.validate()?;
        if let Some(v) = self.initial_forecast {
            if !(1.0..=100.0).contains(&v) {
                return Err(format!("initial_forecast {v} must lie between 1 and 100"));
            }
        }
        Ok(params)
    }

    /// Short label for reports, e.g. `naive` or `h(0.3,0,0.7)`.
    pub fn label(&self) -> String {
        let explicit = self.alpha1.is_some() || self.alpha2.is_some() || self.beta.is_some();
        match (self.preset, explicit) {
            (Some(p), false) => p.name().to_string(),
            _ => match self.params() {
                Ok(p) => format!("h({},{},{})", p.alpha1, p.alpha2, p.beta),
                Err(_) => "h(invalid)".to_string(),
            },
        }
    }
}

/// Forecast from the first-order rule, or the bootstrap rule when the
/// lags it needs are not available yet.
pub fn heuristic_forecast(
    params: &HeuristicParams,
    view: &AgentView,
    initial: Option<f64>,
    rng: &mut SplitMix64,
) -> Forecast {
    if !params.history_sufficient(view) {
        return bootstrap_forecast(view, initial, rng);
    }
    let raw = params.deterministic_value(view) + rng.next_normal(params.noise_sd);
    if raw > 0.0 {
        Forecast::new(raw)
    } else {
        Forecast {
            value: MIN_SCRIPTED_FORECAST,
            reasoning: String::new(),
            correction: Some(Correction::ClampedToMinimum { raw }),
        }
    }
}

/// Round 1: uniform two-decimal draw on [1, 100] (or the configured value).
/// Later rounds: repeat the last realized price.
pub fn bootstrap_forecast(view: &AgentView, initial: Option<f64>, rng: &mut SplitMix64) -> Forecast {
    match view.price_lag(1) {
        Some(last) => Forecast::new(last),
        None => {
            let value = initial.unwrap_or_else(|| rng.next_range_inclusive(100, 10_000) as f64 / 100.0);
            Forecast::new(value)
        }
    }
}

/// A scripted agent following a [`HeuristicParams`] rule.
#[derive(Debug, Clone)]
pub struct HeuristicAgent {
    params: HeuristicParams,
    initial: Option<f64>,
    seed: u64,
    session_id: String,
    index: usize,
}

impl HeuristicAgent {
    pub fn new(spec: &HeuristicSpec, seed: u64, session_id: &str, index: usize) -> Result<Self, AgentError> {
        let params = spec.params().map_err(AgentError::Config)?;
        Ok(Self {
            params,
            initial: spec.initial_forecast,
            seed,
            session_id: session_id.to_string(),
            index,
        })
    }

    pub fn params(&self) -> &HeuristicParams {
        &self.params
    }

    /// Stream for this agent and round; independent of every other agent.
    fn stream(&self, round: usize) -> SplitMix64 {
        SplitMix64::derive(
            self.seed,
            &self.session_id,
            &format!("agent-{}", self.index),
            round as u64,
        )
    }
}

impl Forecaster for HeuristicAgent {
    fn forecast(&mut self, view: &AgentView) -> Result<AgentOutput, AgentError> {
        let mut rng = self.stream(view.round);
        Ok(heuristic_forecast(&self.params, view, self.initial, &mut rng).into())
    }

    fn kind(&self) -> &'static str {
        "heuristic"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::FeedbackType;
    use proptest::prelude::*;

    fn view(prices: &[f64], own: &[f64]) -> AgentView {
        AgentView::from_chronological(prices, own, 0.0, FeedbackType::Positive)
    }

    fn rng() -> SplitMix64 {
        SplitMix64::new(11)
    }

    fn eval(params: HeuristicParams, v: &AgentView) -> f64 {
        heuristic_forecast(&params, v, None, &mut rng()).value
    }

    #[test]
    fn fundamentalist_always_sixty() {
        let p = HeuristicParams::preset(Preset::Fundamentalist);
        assert_eq!(eval(p, &view(&[], &[])), 60.0);
        assert_eq!(eval(p, &view(&[10.0, 95.0, 33.0], &[1.0, 2.0, 3.0])), 60.0);
    }

    #[test]
    fn naive_repeats_last_price() {
        let p = HeuristicParams::preset(Preset::Naive);
        assert_eq!(eval(p, &view(&[50.0, 80.0], &[40.0, 41.0])), 80.0);
    }

    #[test]
    fn pure_trend_rule() {
        let p = HeuristicParams::new(0.0, 0.0, 1.0);
        assert_eq!(eval(p, &view(&[65.0, 70.0], &[60.0, 60.0])), 65.0);
    }

    #[test]
    fn adaptation_midpoint() {
        let p = HeuristicParams::preset(Preset::Adaptive);
        assert_eq!(eval(p, &view(&[55.0, 80.0], &[70.0, 60.0])), 70.0);
    }

    #[test]
    fn bootstrap_round_one_is_two_decimal_and_in_range() {
        let p = HeuristicParams::preset(Preset::TrendFollower);
        for seed in 0..200 {
            let f = heuristic_forecast(&p, &view(&[], &[]), None, &mut SplitMix64::new(seed));
            assert!((1.0..=100.0).contains(&f.value));
            assert!(((f.value * 100.0).round() - f.value * 100.0).abs() < 1e-9);
        }
        let a = heuristic_forecast(&p, &view(&[], &[]), None, &mut SplitMix64::new(5));
        let b = heuristic_forecast(&p, &view(&[], &[]), None, &mut SplitMix64::new(5));
        assert_eq!(a, b);
    }

    #[test]
    fn bootstrap_round_two_is_naive() {
        let p = HeuristicParams::preset(Preset::TrendFollower);
        let f = heuristic_forecast(&p, &view(&[55.3], &[40.0]), None, &mut rng());
        assert_eq!(f.value, 55.3);
        assert_eq!(f.display_value(), 55.30);
    }

    #[test]
    fn configured_initial_forecast_is_used() {
        let p = HeuristicParams::preset(Preset::Naive);
        let f = heuristic_forecast(&p, &view(&[], &[]), Some(39.0), &mut rng());
        assert_eq!(f.value, 39.0);
    }

    #[test]
    fn negative_output_is_clamped_and_flagged() {
        let p = HeuristicParams::new(0.0, 0.0, 1.0);
        let f = eval_full(p, &view(&[90.0, 20.0], &[60.0, 60.0]));
        assert_eq!(f.value, MIN_SCRIPTED_FORECAST);
        assert!(matches!(f.correction, Some(Correction::ClampedToMinimum { raw }) if raw == -10.0));
    }

    fn eval_full(params: HeuristicParams, v: &AgentView) -> Forecast {
        heuristic_forecast(&params, v, None, &mut rng())
    }

    #[test]
    fn spec_resolution() {
        assert_eq!(
            HeuristicSpec::preset(Preset::Adaptive).params().unwrap(),
            HeuristicParams::new(0.5, 0.5, 0.0)
        );
        let s = HeuristicSpec { preset: Some(Preset::Naive), beta: Some(0.2), ..Default::default() };
        assert_eq!(s.params().unwrap(), HeuristicParams::new(1.0, 0.0, 0.2));
        assert!(HeuristicSpec { alpha1: Some(0.1), ..Default::default() }.params().is_err());
        assert!(HeuristicSpec::explicit(1.5, 0.0, 0.0).params().is_err());
        assert!(HeuristicSpec::preset(Preset::Naive).initial(150.0).params().is_err());
        let json = r#"{"preset":"trend_follower","noise_sd":0.2}"#;
        let s: HeuristicSpec = serde_json::from_str(json).unwrap();
        assert_eq!(s.params().unwrap(), HeuristicParams::new(0.0, 0.0, 1.0).with_noise(0.2));
        assert_eq!(s.label(), "trend_follower");
        assert_eq!(HeuristicSpec::explicit(0.3, 0.0, 0.7).label(), "h(0.3,0,0.7)");
    }

    #[test]
    fn agents_draw_independent_streams() {
        let spec = HeuristicSpec::preset(Preset::Naive);
        let mut a = HeuristicAgent::new(&spec, 1, "s", 0).unwrap();
        let mut b = HeuristicAgent::new(&spec, 1, "s", 1).unwrap();
        let v = view(&[], &[]);
        assert_ne!(a.forecast(&v).unwrap().forecast.value, b.forecast(&v).unwrap().forecast.value);
        let mut a2 = HeuristicAgent::new(&spec, 1, "s", 0).unwrap();
        assert_eq!(a.forecast(&v).unwrap(), a2.forecast(&v).unwrap());
    }

    fn history() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (2usize..12).prop_flat_map(|n| {
            (
                prop::collection::vec(20.0f64..100.0, n),
                prop::collection::vec(20.0f64..100.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn presets_match_closed_forms((prices, own) in history()) {
            let v = view(&prices, &own);
            let p1 = *prices.last().unwrap();
            let p2 = prices[prices.len() - 2];
            let e1 = *own.last().unwrap();
            let expect = |preset| match preset {
                Preset::Fundamentalist => 60.0,
                Preset::Naive => p1,
                Preset::Obstinate => e1,
                Preset::TrendFollower => 60.0 + (p1 - p2),
                Preset::TrendReverser => 60.0 - (p1 - p2),
                Preset::Adaptive => 0.5 * p1 + 0.5 * e1,
            };
            for preset in Preset::ALL {
                let raw = HeuristicParams::preset(preset).deterministic_value(&v);
                prop_assert!((raw - expect(preset)).abs() < 1e-12, "{preset}: {raw}");
            }
        }

        #[test]
        fn rule_is_affine_with_expected_slopes(
            (prices, own) in history(),
            a1 in -1.0f64..1.0, a2 in -1.0f64..1.0, b in -1.0f64..1.0,
        ) {
            // Finite differences against the three inputs the rule reads.
            let params = HeuristicParams::new(a1, a2, b);
            let base = params.deterministic_value(&view(&prices, &own));
            let h = 0.5;
            let n = prices.len();

            let mut bumped = prices.clone();
            bumped[n - 1] += h;
            let d_p1 = (params.deterministic_value(&view(&bumped, &own)) - base) / h;

            let mut bumped = own.clone();
            bumped[n - 1] += h;
            let d_e1 = (params.deterministic_value(&view(&prices, &bumped)) - base) / h;

            let mut bumped = prices.clone();
            bumped[n - 2] += h;
            let d_p2 = (params.deterministic_value(&view(&bumped, &own)) - base) / h;

            prop_assert!((d_p1 - (a1 + b)).abs() < 1e-9);
            prop_assert!((d_e1 - a2).abs() < 1e-9);
            prop_assert!((d_p2 + b).abs() < 1e-9);
        }
    }
}
