//! Recovering first-order forecasting rules from session data.
//!
//! Per agent: drop the initial learning phase, regress
//! `e_t - 60` on `[p_{t-1} - 60, e_{t-1} - 60, p_{t-1} - p_{t-2}]` without
//! intercept, prune insignificant coefficients one at a time, and classify
//! the result against the named strategies. Agents that cannot be estimated
//! are reported with a reason code instead of being dropped.

mod fit;
mod learning;
mod ols;
mod panel;
mod stats;
mod summary;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fit::{
    classify_strategy, fit_first_order, fit_unpruned, Classification, Coefficient, DroppedCoefficient,
    HeuristicEstimate, RegressionSample, SampleRow, FUNDAMENTAL_PRICE, MIN_OBSERVATIONS, SIGNIFICANCE,
};
pub use learning::{learning_cutoff, Band, LearningRule};
pub use ols::{ols, OlsFit};
pub use panel::{read_panel_csv, Condition, Panel};
pub use stats::{beta_reg, ln_gamma, t_cdf, two_sided_p};
pub use summary::{alignment_summary, box_stats, quantile, AlignmentSummary, BoxStats, CellSummary};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimationError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("insufficient data: {n_obs} observations, at least {required} required")]
    InsufficientData { n_obs: usize, required: usize },
    #[error("degenerate sample: {0}")]
    Degenerate(String),
    #[error("csv input: {0}")]
    Csv(String),
    #[error("inconsistent panel: {0}")]
    Inconsistent(String),
}

/// Why an agent has no estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "code", rename_all = "snake_case")]
pub enum Infeasible {
    LearningPhaseNeverEnded { rounds: usize },
    InsufficientData { n_obs: usize, required: usize },
    DegenerateSample { detail: String },
}

impl Infeasible {
    pub fn code(&self) -> &'static str {
        match self {
            Infeasible::LearningPhaseNeverEnded { .. } => "learning_phase_never_ended",
            Infeasible::InsufficientData { .. } => "insufficient_data",
            Infeasible::DegenerateSample { .. } => "degenerate_sample",
        }
    }

    pub fn detail(&self) -> String {
        match self {
            Infeasible::LearningPhaseNeverEnded { rounds } => {
                format!("no round among {rounds} had a majority within the band")
            }
            Infeasible::InsufficientData { n_obs, required } => {
                format!("{n_obs} observations, {required} required")
            }
            Infeasible::DegenerateSample { detail } => detail.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationOptions {
    pub remove_learning_phase: bool,
    pub rule: LearningRule,
    pub min_obs: usize,
    /// Leave out rounds where `|forecast - price|` exceeds this.
    pub anomaly_threshold: Option<f64>,
}

impl Default for EstimationOptions {
    fn default() -> Self {
        Self {
            remove_learning_phase: true,
            rule: LearningRule::default(),
            min_obs: MIN_OBSERVATIONS,
            anomaly_threshold: None,
        }
    }
}

/// One agent's outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub session_id: String,
    pub condition: Condition,
    pub agent: usize,
    /// Cutoff detected on the panel, whether or not it was applied.
    pub learning_cutoff: usize,
    pub learning_removed: bool,
    pub outcome: Result<HeuristicEstimate, Infeasible>,
}

/// Runs the pipeline on every agent of `panel`.
pub fn estimate_panel(panel: &Panel, options: &EstimationOptions) -> Result<Vec<EstimateRow>, EstimationError> {
    panel.validate()?;
    let detected = learning_cutoff(&panel.prices, &panel.forecasts, &options.rule);
    let applied = if options.remove_learning_phase { detected } else { 0 };
    let rows = (0..panel.n_agents())
        .map(|agent| {
            let outcome = if options.remove_learning_phase && detected >= panel.rounds() {
                Err(Infeasible::LearningPhaseNeverEnded { rounds: panel.rounds() })
            } else {
                let sample = RegressionSample::build(
                    &panel.prices,
                    &panel.forecasts[agent],
                    agent,
                    applied,
                    options.anomaly_threshold,
                );
                match fit_first_order(&sample, options.min_obs) {
                    Ok(est) => Ok(est),
                    Err(EstimationError::InsufficientData { n_obs, required }) => {
                        Err(Infeasible::InsufficientData { n_obs, required })
                    }
                    Err(EstimationError::Degenerate(detail)) => Err(Infeasible::DegenerateSample { detail }),
                    Err(e) => return Err(e),
                }
            };
            Ok(EstimateRow {
                session_id: panel.session_id.clone(),
                condition: panel.condition.clone(),
                agent,
                learning_cutoff: detected,
                learning_removed: options.remove_learning_phase,
                outcome,
            })
        })
        .collect::<Result<Vec<_>, EstimationError>>()?;
    Ok(rows)
}
