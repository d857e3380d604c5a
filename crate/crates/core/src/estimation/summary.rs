//! Box-plot statistics and per-condition β alignment.

use serde::{Deserialize, Serialize};

use super::panel::Condition;
use super::EstimateRow;

/// Quartile rule: linear interpolation between order statistics at position
/// `(n + 1) p`, clamped to the sample range.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "quantile of an empty sample");
    let h = (n as f64 + 1.0) * p;
    if h <= 1.0 {
        return sorted[0];
    }
    if h >= n as f64 {
        return sorted[n - 1];
    }
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    sorted[lo - 1] + frac * (sorted[lo] - sorted[lo - 1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    /// Most extreme observations within 1.5 IQR of the box.
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub min: f64,
    pub max: f64,
    pub outliers: Vec<f64>,
}

pub fn box_stats(values: &[f64]) -> Option<BoxStats> {
    if values.is_empty() {
        return None;
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let q1 = quantile(&s, 0.25);
    let q3 = quantile(&s, 0.75);
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside: Vec<f64> = s.iter().copied().filter(|v| *v >= lo_fence && *v <= hi_fence).collect();
    Some(BoxStats {
        n: s.len(),
        mean: values.iter().sum::<f64>() / values.len() as f64,
        median: quantile(&s, 0.5),
        q1,
        q3,
        iqr,
        whisker_low: inside.first().copied().unwrap_or(q1),
        whisker_high: inside.last().copied().unwrap_or(q3),
        min: s[0],
        max: s[s.len() - 1],
        outliers: s.iter().copied().filter(|v| *v < lo_fence || *v > hi_fence).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub condition: Condition,
    pub n_agents: usize,
    pub n_feasible: usize,
    /// β of every feasible agent, in input order.
    pub betas: Vec<f64>,
    pub stats: Option<BoxStats>,
    pub human_benchmark_beta: f64,
    /// `mean β - benchmark`.
    pub deviation: Option<f64>,
    pub infeasible: bool,
    /// Reason codes of agents without an estimate, with counts.
    pub infeasible_reasons: Vec<(String, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentSummary {
    pub cells: Vec<CellSummary>,
}

/// Groups estimate rows by condition (first-seen order) and summarizes β.
/// A cell without any feasible estimate is flagged infeasible.
pub fn alignment_summary(rows: &[EstimateRow]) -> AlignmentSummary {
    let mut order: Vec<String> = Vec::new();
    let mut groups: std::collections::HashMap<String, Vec<&EstimateRow>> = Default::default();
    for r in rows {
        let key = r.condition.key();
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
    }
    let cells = order
        .into_iter()
        .map(|key| {
            let group = &groups[&key];
            let condition = group[0].condition.clone();
            let betas: Vec<f64> = group
                .iter()
                .filter_map(|r| r.outcome.as_ref().ok().map(|e| e.beta))
                .collect();
            let mut reasons: Vec<(String, usize)> = Vec::new();
            for r in group {
                if let Err(inf) = &r.outcome {
                    let code = inf.code().to_string();
                    match reasons.iter_mut().find(|(c, _)| *c == code) {
                        Some((_, n)) => *n += 1,
                        None => reasons.push((code, 1)),
                    }
                }
            }
            let stats = box_stats(&betas);
            let benchmark = condition.feedback.human_benchmark_beta();
            CellSummary {
                n_agents: group.len(),
                n_feasible: betas.len(),
                deviation: stats.as_ref().map(|s| s.mean - benchmark),
                infeasible: betas.is_empty(),
                human_benchmark_beta: benchmark,
                betas,
                stats,
                infeasible_reasons: reasons,
                condition,
            }
        })
        .collect();
    AlignmentSummary { cells }
}
