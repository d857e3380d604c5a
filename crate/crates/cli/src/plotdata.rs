//! `ltf plotdata`: long-format tables for time-series and β box plots.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ltf_core::estimation::{alignment_summary, Condition, EstimateRow, HeuristicEstimate, Infeasible};
use ltf_core::transcript::{read_transcript, SCHEMA_VERSION};
use serde::{Deserialize, Serialize};

use crate::estimate::{alignment_records, read_estimates, write_csv, AlignmentRecord, EstimateRecord};
use crate::files::{collect_transcripts, ensure_dir, peek_header};

pub const TIMESERIES_FILE: &str = "timeseries.csv";
pub const BOXPLOT_FILE: &str = "boxplot.csv";

#[derive(Debug, Clone)]
pub struct PlotOptions {
    pub transcripts: Vec<PathBuf>,
    pub estimates: Option<PathBuf>,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub round: usize,
    /// `price` or `agent-<i>` (that agent's forecast).
    pub series: String,
    pub value: f64,
    pub condition: String,
    pub session_id: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlotOutput {
    pub timeseries: Vec<SeriesPoint>,
    pub boxplot: Vec<AlignmentRecord>,
}

/// Refuses transcripts written under different schema versions.
fn check_schema_versions(paths: &[PathBuf]) -> Result<()> {
    let mut versions = BTreeSet::new();
    for p in paths {
        let header = peek_header(p)?.with_context(|| format!("{} is not a transcript", p.display()))?;
        let v = header
            .get("schema_version")
            .and_then(|v| v.as_u64())
            .with_context(|| format!("{}: header has no schema_version", p.display()))?;
        versions.insert(v);
    }
    if versions.len() > 1 {
        bail!("transcripts mix schema versions {versions:?}; convert them to one version first");
    }
    if let Some(&v) = versions.first() {
        if v != u64::from(SCHEMA_VERSION) {
            bail!("schema_version {v} is not supported (expected {SCHEMA_VERSION})");
        }
    }
    Ok(())
}

pub fn timeseries(paths: &[PathBuf]) -> Result<Vec<SeriesPoint>> {
    check_schema_versions(paths)?;
    let mut points = Vec::new();
    for p in paths {
        let t = read_transcript(p).with_context(|| format!("cannot read transcript {}", p.display()))?;
        let condition = Condition::of_config(&t.header.config).key();
        let id = &t.header.config.session_id;
        for r in &t.records {
            points.push(SeriesPoint {
                round: r.round,
                series: "price".into(),
                value: r.price,
                condition: condition.clone(),
                session_id: id.clone(),
            });
            for a in &r.agents {
                points.push(SeriesPoint {
                    round: r.round,
                    series: format!("agent-{}", a.agent),
                    value: a.prediction,
                    condition: condition.clone(),
                    session_id: id.clone(),
                });
            }
        }
    }
    Ok(points)
}

/// Rebuilds estimate rows from the primary variant of `estimates.csv`; only
/// β and the reason codes matter for the box plot.
fn rows_from_records(records: &[EstimateRecord]) -> Result<Vec<EstimateRow>> {
    records
        .iter()
        .filter(|r| r.primary)
        .map(|r| {
            let outcome = match (r.status.as_str(), r.beta) {
                ("ok", Some(beta)) => Ok(HeuristicEstimate {
                    agent: r.agent,
                    alpha1: r.alpha1.unwrap_or_default(),
                    alpha2: r.alpha2.unwrap_or_default(),
                    beta,
                    std_errors: [r.se_alpha1, r.se_alpha2, r.se_beta],
                    p_values: [r.p_alpha1, r.p_alpha2, r.p_beta],
                    dropped: Vec::new(),
                    n_obs: r.n_obs.unwrap_or_default(),
                    learning_cutoff: r.learning_cutoff,
                    r_squared: r.r_squared.unwrap_or_default(),
                    unpruned: [0.0; 3],
                }),
                ("infeasible", _) => Err(match r.reason.as_str() {
                    "learning_phase_never_ended" => Infeasible::LearningPhaseNeverEnded { rounds: r.learning_cutoff },
                    "insufficient_data" => Infeasible::InsufficientData { n_obs: 0, required: 0 },
                    _ => Infeasible::DegenerateSample { detail: r.detail.clone() },
                }),
                (status, _) => bail!("session {} agent {}: bad status {status:?}", r.session_id, r.agent),
            };
            Ok(EstimateRow {
                session_id: r.session_id.clone(),
                condition: r.condition(),
                agent: r.agent,
                learning_cutoff: r.learning_cutoff,
                learning_removed: r.variant == crate::estimate::VARIANT_REMOVED,
                outcome,
            })
        })
        .collect()
}

pub fn boxplot(estimates: &Path) -> Result<Vec<AlignmentRecord>> {
    let records = read_estimates(estimates)?;
    let rows = rows_from_records(&records)?;
    Ok(alignment_records(&alignment_summary(&rows)))
}

pub fn run(opts: &PlotOptions, out: &mut dyn Write) -> Result<PlotOutput> {
    if opts.transcripts.is_empty() && opts.estimates.is_none() {
        bail!("no input: give transcripts and/or --estimates");
    }
    let paths = collect_transcripts(&opts.transcripts)?;
    let mut output = PlotOutput::default();
    ensure_dir(&opts.out)?;
    if !paths.is_empty() {
        output.timeseries = timeseries(&paths)?;
        write_csv(&opts.out.join(TIMESERIES_FILE), &output.timeseries)?;
        writeln!(out, "{TIMESERIES_FILE}: {} rows from {} transcripts", output.timeseries.len(), paths.len())?;
    }
    if let Some(est) = &opts.estimates {
        output.boxplot = boxplot(est)?;
        write_csv(&opts.out.join(BOXPLOT_FILE), &output.boxplot)?;
        writeln!(out, "{BOXPLOT_FILE}: {} conditions", output.boxplot.len())?;
    }
    Ok(output)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixed_versions_are_refused() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.jsonl");
        let b = dir.path().join("b.jsonl");
        std::fs::write(&a, "{\"kind\":\"header\",\"schema_version\":1}\n").unwrap();
        std::fs::write(&b, "{\"kind\":\"header\",\"schema_version\":2}\n").unwrap();
        let err = check_schema_versions(&[a.clone(), b.clone()]).unwrap_err().to_string();
        assert!(err.contains("mix"), "{err}");
        assert!(check_schema_versions(&[b]).is_err());
        assert!(check_schema_versions(&[a]).is_ok());
    }
}
