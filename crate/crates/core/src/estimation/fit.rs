//! First-order heuristic fit with iterative significance pruning.

use serde::{Deserialize, Serialize};

use super::ols::{ols, OlsFit};
use super::EstimationError;
use crate::agents::Preset;

/// Anchor of the demeaned regression form.
pub const FUNDAMENTAL_PRICE: f64 = 60.0;
/// Significance level used for pruning.
pub const SIGNIFICANCE: f64 = 0.05;
/// Smallest sample accepted by [`fit_first_order`].
pub const MIN_OBSERVATIONS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coefficient {
    Alpha1,
    Alpha2,
    Beta,
}

impl Coefficient {
    pub const ALL: [Coefficient; 3] = [Coefficient::Alpha1, Coefficient::Alpha2, Coefficient::Beta];

    pub fn name(self) -> &'static str {
        match self {
            Coefficient::Alpha1 => "alpha1",
            Coefficient::Alpha2 => "alpha2",
            Coefficient::Beta => "beta",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub round: usize,
    /// `e_t - 60`.
    pub y: f64,
    /// `[p_{t-1} - 60, e_{t-1} - 60, p_{t-1} - p_{t-2}]`.
    pub x: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionSample {
    pub agent: usize,
    pub learning_cutoff: usize,
    pub rows: Vec<SampleRow>,
}

impl RegressionSample {
    /// Rows for rounds `t >= max(3, cutoff + 1)`. With `anomaly_threshold`,
    /// rounds where the forecast misses the price by more than that are left out.
    pub fn build(
        prices: &[f64],
        forecasts: &[f64],
        agent: usize,
        learning_cutoff: usize,
        anomaly_threshold: Option<f64>,
    ) -> Self {
        let first = 3.max(learning_cutoff + 1);
        let rows = (first..=prices.len())
            .filter(|&t| anomaly_threshold.is_none_or(|thr| (forecasts[t - 1] - prices[t - 1]).abs() <= thr))
            .map(|t| {
                let (p1, p2, e1, e) = (prices[t - 2], prices[t - 3], forecasts[t - 2], forecasts[t - 1]);
                SampleRow {
                    round: t,
                    y: e - FUNDAMENTAL_PRICE,
                    x: [p1 - FUNDAMENTAL_PRICE, e1 - FUNDAMENTAL_PRICE, p1 - p2],
                }
            })
            .collect();
        Self {
            agent,
            learning_cutoff,
            rows,
        }
    }

    pub fn n_obs(&self) -> usize {
        self.rows.len()
    }

    /// First and last round used.
    pub fn rounds_used(&self) -> Option<(usize, usize)> {
        Some((self.rows.first()?.round, self.rows.last()?.round))
    }

    fn design(&self, active: &[Coefficient]) -> (Vec<Vec<f64>>, Vec<f64>) {
        let x = self
            .rows
            .iter()
            .map(|r| active.iter().map(|c| r.x[c.index()]).collect())
            .collect();
        (x, self.rows.iter().map(|r| r.y).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DroppedCoefficient {
    pub coefficient: Coefficient,
    /// p-value at the time it was dropped.
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeuristicEstimate {
    pub agent: usize,
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta: f64,
    /// `None` for pruned coefficients.
    pub std_errors: [Option<f64>; 3],
    pub p_values: [Option<f64>; 3],
    /// In pruning order.
    pub dropped: Vec<DroppedCoefficient>,
    pub n_obs: usize,
    pub learning_cutoff: usize,
    pub r_squared: f64,
    /// Coefficients of the full model before any pruning.
    pub unpruned: [f64; 3],
}

impl HeuristicEstimate {
    pub fn coefficients(&self) -> [f64; 3] {
        [self.alpha1, self.alpha2, self.beta]
    }

    /// The rule's forecast in levels: `a1 p1 + a2 e1 + (1 - a1 - a2) 60 + b (p1 - p2)`.
    pub fn predict(&self, p1: f64, e1: f64, p2: f64) -> f64 {
        self.alpha1 * p1
            + self.alpha2 * e1
            + (1.0 - self.alpha1 - self.alpha2) * FUNDAMENTAL_PRICE
            + self.beta * (p1 - p2)
    }

    pub fn is_pruned(&self, c: Coefficient) -> bool {
        self.dropped.iter().any(|d| d.coefficient == c)
    }
}

/// OLS of the full three-regressor model, no pruning.
pub fn fit_unpruned(sample: &RegressionSample) -> Result<OlsFit, EstimationError> {
    let (x, y) = sample.design(&Coefficient::ALL);
    ols(&x, &y)
}

/// Fits the full model, then repeatedly drops the coefficient with the
/// highest p-value at or above 5% and refits. Dropped coefficients are
/// never re-entered and are reported as exactly 0.
pub fn fit_first_order(sample: &RegressionSample, min_obs: usize) -> Result<HeuristicEstimate, EstimationError> {
    let n = sample.n_obs();
    if n < min_obs.max(Coefficient::ALL.len() + 1) {
        return Err(EstimationError::InsufficientData {
            n_obs: n,
            required: min_obs,
        });
    }
    let mut active: Vec<Coefficient> = Coefficient::ALL.to_vec();
    let mut dropped = Vec::new();
    let full = fit_unpruned(sample)?;
    let mut fit = full.clone();
    loop {
        let worst = fit
            .p_values
            .iter()
            .enumerate()
            .filter(|(_, p)| **p >= SIGNIFICANCE)
            .fold(None::<(usize, f64)>, |best, (i, &p)| match best {
                Some((_, bp)) if bp >= p => best,
                _ => Some((i, p)),
            });
        let Some((i, p)) = worst else { break };
        dropped.push(DroppedCoefficient {
            coefficient: active.remove(i),
            p_value: p,
        });
        let (x, y) = sample.design(&active);
        fit = ols(&x, &y)?;
    }

    let mut coef = [0.0; 3];
    let mut se = [None; 3];
    let mut pv = [None; 3];
    for (j, c) in active.iter().enumerate() {
        coef[c.index()] = fit.coef[j];
        se[c.index()] = Some(fit.std_errors[j]);
        pv[c.index()] = Some(fit.p_values[j]);
    }
    Ok(HeuristicEstimate {
        agent: sample.agent,
        alpha1: coef[0],
        alpha2: coef[1],
        beta: coef[2],
        std_errors: se,
        p_values: pv,
        dropped,
        n_obs: n,
        learning_cutoff: sample.learning_cutoff,
        r_squared: fit.r_squared(),
        unpruned: [full.coef[0], full.coef[1], full.coef[2]],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    /// Strategy name of the nearest preset, e.g. `naivety`.
    pub label: String,
    pub nearest: Preset,
    pub distance: f64,
    /// Euclidean distance in (alpha1, alpha2, beta) to every preset.
    pub distances: Vec<(Preset, f64)>,
    pub point: [f64; 3],
}

/// Nearest named strategy to an estimate.
pub fn classify_strategy(est: &HeuristicEstimate) -> Classification {
    let point = est.coefficients();
    let distances: Vec<(Preset, f64)> = Preset::ALL
        .iter()
        .map(|&p| {
            let (a1, a2, b) = p.coefficients();
            let d = ((point[0] - a1).powi(2) + (point[1] - a2).powi(2) + (point[2] - b).powi(2)).sqrt();
            (p, d)
        })
        .collect();
    let (nearest, distance) = distances
        .iter()
        .copied()
        .fold(None::<(Preset, f64)>, |best, (p, d)| match best {
            Some((_, bd)) if bd <= d => best,
            _ => Some((p, d)),
        })
        .expect("presets are non-empty");
    Classification {
        label: nearest.strategy().to_string(),
        nearest,
        distance,
        distances,
        point,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn estimate_at(a1: f64, a2: f64, b: f64) -> HeuristicEstimate {
        HeuristicEstimate {
            agent: 0,
            alpha1: a1,
            alpha2: a2,
            beta: b,
            std_errors: [None; 3],
            p_values: [None; 3],
            dropped: Vec::new(),
            n_obs: 0,
            learning_cutoff: 0,
            r_squared: 0.0,
            unpruned: [a1, a2, b],
        }
    }

    /// Exogenous noisy prices and an agent following (a1, a2, b) with noise.
    fn simulate(a1: f64, a2: f64, b: f64, nu: f64, seed: u64, rounds: usize) -> (Vec<f64>, Vec<f64>) {
        let mut rng = SplitMix64::new(seed);
        let prices: Vec<f64> = (0..rounds).map(|_| 60.0 + rng.next_normal(3.0)).collect();
        let mut e = vec![60.0 + rng.next_normal(3.0), 60.0 + rng.next_normal(3.0)];
        for t in 2..rounds {
            let v = a1 * prices[t - 1] + a2 * e[t - 1] + (1.0 - a1 - a2) * 60.0
                + b * (prices[t - 1] - prices[t - 2])
                + rng.next_normal(nu);
            e.push(v);
        }
        (prices, e)
    }

    #[test]
    fn sample_rows_start_after_cutoff() {
        let prices: Vec<f64> = (1..=20).map(|t| 50.0 + t as f64).collect();
        let e: Vec<f64> = (1..=20).map(|t| 49.0 + t as f64).collect();
        let s = RegressionSample::build(&prices, &e, 2, 0, None);
        assert_eq!(s.rounds_used(), Some((3, 20)));
        assert_eq!(s.rows[0].y, e[2] - 60.0);
        assert_eq!(s.rows[0].x, [prices[1] - 60.0, e[1] - 60.0, prices[1] - prices[0]]);
        let s = RegressionSample::build(&prices, &e, 2, 7, None);
        assert_eq!(s.rounds_used(), Some((8, 20)));
        let s = RegressionSample::build(&prices, &e, 2, 20, None);
        assert_eq!(s.n_obs(), 0);
    }

    #[test]
    fn anomaly_filter_drops_rows() {
        let prices = vec![60.0; 12];
        let mut e = vec![60.0; 12];
        e[5] = 95.0;
        let s = RegressionSample::build(&prices, &e, 0, 0, Some(30.0));
        assert_eq!(s.n_obs(), 9);
        assert!(s.rows.iter().all(|r| r.round != 6));
    }

    #[test]
    fn recovers_naive_and_prunes_the_rest() {
        let (p, e) = simulate(1.0, 0.0, 0.0, 0.05, 3, 50);
        let est = fit_first_order(&RegressionSample::build(&p, &e, 0, 0, None), MIN_OBSERVATIONS).unwrap();
        assert!((est.alpha1 - 1.0).abs() < 0.05, "{est:?}");
        assert!(est.is_pruned(Coefficient::Alpha2) && est.is_pruned(Coefficient::Beta));
        assert_eq!(est.alpha2, 0.0);
        assert_eq!(est.beta, 0.0);
        assert_eq!(est.std_errors[1], None);
    }

    #[test]
    fn recovers_trend_following() {
        let (p, e) = simulate(0.0, 0.0, 0.8, 0.2, 9, 50);
        let est = fit_first_order(&RegressionSample::build(&p, &e, 0, 0, None), MIN_OBSERVATIONS).unwrap();
        assert!((est.beta - 0.8).abs() < 0.1, "{est:?}");
    }

    #[test]
    fn zero_dependent_prunes_everything() {
        let (p, _) = simulate(0.0, 0.0, 0.0, 0.0, 5, 30);
        let mut e = vec![60.0; 30];
        e[1] = 65.0;
        let est = fit_first_order(&RegressionSample::build(&p, &e, 0, 0, None), MIN_OBSERVATIONS).unwrap();
        assert_eq!(est.coefficients(), [0.0, 0.0, 0.0]);
        assert_eq!(est.dropped.len(), 3);
        assert_eq!(classify_strategy(&est).label, "fundamentalism");
    }

    #[test]
    fn pruning_order_follows_p_values() {
        for seed in 0..10 {
            let (p, e) = simulate(0.6, 0.0, 0.0, 1.0, seed, 50);
            let s = RegressionSample::build(&p, &e, 0, 0, None);
            let est = fit_first_order(&s, MIN_OBSERVATIONS).unwrap();
            for c in Coefficient::ALL {
                if let Some(pv) = est.p_values[c.index()] {
                    assert!(pv < SIGNIFICANCE);
                }
            }
            // The first drop is the largest p-value of the full fit.
            if let Some(first) = est.dropped.first() {
                let full = fit_unpruned(&s).unwrap();
                let max = full.p_values.iter().cloned().fold(f64::MIN, f64::max);
                assert_eq!(first.p_value, max);
            }
        }
    }

    #[test]
    fn constant_prices_are_degenerate() {
        let prices = vec![60.0; 20];
        let e: Vec<f64> = (0..20).map(|t| 60.0 + (t % 3) as f64).collect();
        let err = fit_first_order(&RegressionSample::build(&prices, &e, 0, 0, None), MIN_OBSERVATIONS).unwrap_err();
        assert!(matches!(err, EstimationError::Degenerate(_)));
    }

    #[test]
    fn too_few_observations() {
        let (p, e) = simulate(1.0, 0.0, 0.0, 0.1, 1, 11);
        let err = fit_first_order(&RegressionSample::build(&p, &e, 0, 0, None), MIN_OBSERVATIONS).unwrap_err();
        assert!(matches!(err, EstimationError::InsufficientData { n_obs: 9, required: 10 }));
    }

    #[test]
    fn demeaned_form_reproduces_level_predictions() {
        let (p, e) = simulate(0.4, 0.3, 0.5, 0.5, 2, 50);
        let s = RegressionSample::build(&p, &e, 0, 0, None);
        let full = fit_unpruned(&s).unwrap();
        let est = estimate_at(full.coef[0], full.coef[1], full.coef[2]);
        for r in &s.rows {
            let t = r.round;
            let level = est.predict(p[t - 2], e[t - 2], p[t - 3]);
            let demeaned: f64 = r.x.iter().zip(&full.coef).map(|(a, b)| a * b).sum::<f64>() + 60.0;
            assert!((level - demeaned).abs() < 1e-12);
        }
    }

    #[test]
    fn classification_examples() {
        let c = classify_strategy(&estimate_at(0.0, 0.0, 0.0));
        assert_eq!((c.label.as_str(), c.distance), ("fundamentalism", 0.0));
        let c = classify_strategy(&estimate_at(1.0, 0.0, 0.0));
        assert_eq!((c.label.as_str(), c.distance), ("naivety", 0.0));
        let c = classify_strategy(&estimate_at(0.9, 0.05, 0.6));
        assert_eq!(c.label, "naivety");
        let d = |p: Preset| c.distances.iter().find(|(q, _)| *q == p).unwrap().1;
        assert!((d(Preset::Naive) - (0.01f64 + 0.0025 + 0.36).sqrt()).abs() < 1e-12);
        assert!((d(Preset::TrendFollower) - (0.81f64 + 0.0025 + 0.16).sqrt()).abs() < 1e-12);
        assert!((d(Preset::Adaptive) - (0.16f64 + 0.2025 + 0.36).sqrt()).abs() < 1e-12);
        assert!((d(Preset::Fundamentalist) - (0.81f64 + 0.0025 + 0.36).sqrt()).abs() < 1e-12);
        assert_eq!(c.distances.len(), 6);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]
        #[test]
        fn pruning_partitions_coefficients(
            a1 in -1.0f64..1.0, a2 in -1.0f64..1.0, b in -1.0f64..1.0,
            nu in 0.1f64..3.0, seed: u64, rounds in 20usize..60,
        ) {
            let (p, e) = simulate(a1, a2, b, nu, seed, rounds);
            let s = RegressionSample::build(&p, &e, 0, 0, None);
            let est = fit_first_order(&s, 10).unwrap();
            let coefs = est.coefficients();
            let mut seen = [false; 3];
            for d in &est.dropped {
                let i = d.coefficient.index();
                proptest::prop_assert!(!seen[i]);
                seen[i] = true;
                proptest::prop_assert!(d.p_value >= 0.05);
                proptest::prop_assert_eq!(coefs[i], 0.0);
                proptest::prop_assert!(est.p_values[i].is_none());
            }
            for c in Coefficient::ALL {
                let i = c.index();
                proptest::prop_assert_eq!(est.is_pruned(c), seen[i]);
                if !seen[i] {
                    proptest::prop_assert!(est.p_values[i].unwrap() < 0.05);
                }
            }
        }
    }
}
