//! Initial learning phase: the rounds before a majority forecasts close to the price.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Band {
    /// `|forecast - price| <= fraction * price`.
    Relative(f64),
    /// `|forecast - price| <= width`.
    Absolute(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningRule {
    pub band: Band,
    /// Use `<` instead of `<=` at the band edge.
    #[serde(default)]
    pub strict: bool,
}

impl Default for LearningRule {
    fn default() -> Self {
        Self {
            band: Band::Relative(0.05),
            strict: false,
        }
    }
}

impl LearningRule {
    pub fn within(&self, forecast: f64, price: f64) -> bool {
        let gap = (forecast - price).abs();
        let limit = match self.band {
            Band::Relative(f) => f * price.abs(),
            Band::Absolute(w) => w,
        };
        if self.strict { gap < limit } else { gap <= limit }
    }
}

/// Last round of the learning phase: the longest prefix of rounds in which
/// at most `floor(n/2)` agents are within the band. `0` when round 1
/// already has a majority; `prices.len()` when no round ever does.
pub fn learning_cutoff(prices: &[f64], forecasts: &[Vec<f64>], rule: &LearningRule) -> usize {
    let n = forecasts.len();
    let majority = n / 2 + 1;
    for (t, &price) in prices.iter().enumerate() {
        let close = forecasts.iter().filter(|f| rule.within(f[t], price)).count();
        if close >= majority {
            return t;
        }
    }
    prices.len()
}
