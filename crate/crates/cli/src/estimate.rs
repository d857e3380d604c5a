//! `ltf estimate`: per-agent rule estimates, per-condition β alignment and
//! prism points from transcripts or externally collected CSV data.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ltf_core::estimation::{
    alignment_summary, classify_strategy, estimate_panel, read_panel_csv, AlignmentSummary, Band, Condition,
    EstimateRow, EstimationOptions, LearningRule, Panel,
};
use ltf_core::market::FeedbackType;
use ltf_core::transcript::{read_transcript, SCHEMA_VERSION};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::files::{collect_transcripts, ensure_dir};

pub const ESTIMATES_FILE: &str = "estimates.csv";
pub const ALIGNMENT_FILE: &str = "alignment.csv";
pub const PRISM_FILE: &str = "prism.csv";

pub const VARIANT_REMOVED: &str = "learning_removed";
pub const VARIANT_FULL: &str = "full_sample";

#[derive(Debug, Clone)]
pub struct EstimateOptions {
    pub inputs: Vec<PathBuf>,
    pub human_csv: Option<PathBuf>,
    /// Feedback of CSV sessions without a `feedback` column.
    pub feedback: Option<FeedbackType>,
    pub out: PathBuf,
    /// Report the full-sample variant as the primary one.
    pub no_learning_phase: bool,
    pub rule: LearningRule,
    /// Only applied to CSV input.
    pub anomaly_threshold: Option<f64>,
}

/// One row of `estimates.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub schema_version: u32,
    pub variant: String,
    /// Whether this variant feeds the alignment and prism tables.
    pub primary: bool,
    pub condition: String,
    pub policy: String,
    pub memory: Option<usize>,
    pub temperature: Option<f64>,
    pub feedback: FeedbackType,
    pub session_id: String,
    pub agent: usize,
    pub status: String,
    pub reason: String,
    pub detail: String,
    pub learning_cutoff: usize,
    pub n_obs: Option<usize>,
    pub alpha1: Option<f64>,
    pub alpha2: Option<f64>,
    pub beta: Option<f64>,
    pub se_alpha1: Option<f64>,
    pub se_alpha2: Option<f64>,
    pub se_beta: Option<f64>,
    pub p_alpha1: Option<f64>,
    pub p_alpha2: Option<f64>,
    pub p_beta: Option<f64>,
    /// Pruned coefficients in drop order, `;`-separated.
    pub dropped: String,
    pub r_squared: Option<f64>,
    pub strategy: String,
    pub nearest: String,
    pub distance: Option<f64>,
}

impl EstimateRecord {
    pub fn from_row(row: &EstimateRow, variant: &str, primary: bool) -> Self {
        let c = &row.condition;
        let mut rec = EstimateRecord {
            schema_version: SCHEMA_VERSION,
            variant: variant.to_string(),
            primary,
            condition: c.key(),
            policy: c.policy.clone(),
            memory: c.memory,
            temperature: c.temperature,
            feedback: c.feedback,
            session_id: row.session_id.clone(),
            agent: row.agent,
            status: String::new(),
            reason: String::new(),
            detail: String::new(),
            learning_cutoff: row.learning_cutoff,
            n_obs: None,
            alpha1: None,
            alpha2: None,
            beta: None,
            se_alpha1: None,
            se_alpha2: None,
            se_beta: None,
            p_alpha1: None,
            p_alpha2: None,
            p_beta: None,
            dropped: String::new(),
            r_squared: None,
            strategy: String::new(),
            nearest: String::new(),
            distance: None,
        };
        match &row.outcome {
            Ok(est) => {
                let class = classify_strategy(est);
                rec.status = "ok".into();
                rec.n_obs = Some(est.n_obs);
                rec.alpha1 = Some(est.alpha1);
                rec.alpha2 = Some(est.alpha2);
                rec.beta = Some(est.beta);
                [rec.se_alpha1, rec.se_alpha2, rec.se_beta] = est.std_errors;
                [rec.p_alpha1, rec.p_alpha2, rec.p_beta] = est.p_values;
                rec.dropped = est
                    .dropped
                    .iter()
                    .map(|d| d.coefficient.name())
                    .collect::<Vec<_>>()
                    .join(";");
                rec.r_squared = Some(est.r_squared);
                rec.strategy = class.label;
                rec.nearest = class.nearest.name().to_string();
                rec.distance = Some(class.distance);
            }
            Err(inf) => {
                rec.status = "infeasible".into();
                rec.reason = inf.code().to_string();
                rec.detail = inf.detail();
            }
        }
        rec
    }

    pub fn condition(&self) -> Condition {
        Condition {
            policy: self.policy.clone(),
            memory: self.memory,
            temperature: self.temperature,
            feedback: self.feedback,
        }
    }
}

/// One row of `alignment.csv` (also the box-plot table of `ltf plotdata`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRecord {
    pub condition: String,
    pub policy: String,
    pub memory: Option<usize>,
    pub temperature: Option<f64>,
    pub feedback: FeedbackType,
    pub n_agents: usize,
    pub n_feasible: usize,
    pub status: String,
    /// `code:count` pairs of agents without an estimate.
    pub reasons: String,
    pub mean_beta: Option<f64>,
    pub median_beta: Option<f64>,
    pub q1_beta: Option<f64>,
    pub q3_beta: Option<f64>,
    pub iqr_beta: Option<f64>,
    pub whisker_low: Option<f64>,
    pub whisker_high: Option<f64>,
    pub min_beta: Option<f64>,
    pub max_beta: Option<f64>,
    pub human_benchmark_beta: f64,
    pub deviation: Option<f64>,
}

pub fn alignment_records(summary: &AlignmentSummary) -> Vec<AlignmentRecord> {
    summary
        .cells
        .iter()
        .map(|cell| {
            let s = cell.stats.as_ref();
            AlignmentRecord {
                condition: cell.condition.key(),
                policy: cell.condition.policy.clone(),
                memory: cell.condition.memory,
                temperature: cell.condition.temperature,
                feedback: cell.condition.feedback,
                n_agents: cell.n_agents,
                n_feasible: cell.n_feasible,
                status: if cell.infeasible { "infeasible" } else { "ok" }.into(),
                reasons: cell
                    .infeasible_reasons
                    .iter()
                    .map(|(c, n)| format!("{c}:{n}"))
                    .collect::<Vec<_>>()
                    .join(";"),
                mean_beta: s.map(|s| s.mean),
                median_beta: s.map(|s| s.median),
                q1_beta: s.map(|s| s.q1),
                q3_beta: s.map(|s| s.q3),
                iqr_beta: s.map(|s| s.iqr),
                whisker_low: s.map(|s| s.whisker_low),
                whisker_high: s.map(|s| s.whisker_high),
                min_beta: s.map(|s| s.min),
                max_beta: s.map(|s| s.max),
                human_benchmark_beta: cell.human_benchmark_beta,
                deviation: cell.deviation,
            }
        })
        .collect()
}

/// One row of `prism.csv`: a feasible agent's point in coefficient space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrismRecord {
    pub condition: String,
    pub session_id: String,
    pub agent: usize,
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta: f64,
    pub strategy: String,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateOutput {
    pub records: Vec<EstimateRecord>,
    pub alignment: Vec<AlignmentRecord>,
    pub prism: Vec<PrismRecord>,
}

pub fn load_panels(opts: &EstimateOptions) -> Result<(Vec<Panel>, Vec<Panel>)> {
    let paths = collect_transcripts(&opts.inputs)?;
    let transcripts: Vec<Panel> = paths
        .par_iter()
        .map(|p| {
            let t = read_transcript(p).with_context(|| format!("cannot read transcript {}", p.display()))?;
            Ok(Panel::from_transcript(&t))
        })
        .collect::<Result<_>>()?;
    let csv = match &opts.human_csv {
        Some(path) => {
            let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
            read_panel_csv(f, opts.feedback).with_context(|| format!("in {}", path.display()))?
        }
        None => Vec::new(),
    };
    if transcripts.is_empty() && csv.is_empty() {
        bail!("no input: give transcript files or directories, or --human-csv");
    }
    Ok((transcripts, csv))
}

/// Both variants for every agent; the primary variant drives alignment and prism.
pub fn estimate(opts: &EstimateOptions) -> Result<EstimateOutput> {
    let (transcripts, csv) = load_panels(opts)?;
    let jobs: Vec<(&Panel, bool)> = transcripts
        .iter()
        .map(|p| (p, false))
        .chain(csv.iter().map(|p| (p, true)))
        .collect();
    let variants = [(VARIANT_REMOVED, true), (VARIANT_FULL, false)];
    let per_panel: Vec<[Vec<EstimateRow>; 2]> = jobs
        .par_iter()
        .map(|(panel, is_csv)| {
            let run = |remove: bool| {
                let o = EstimationOptions {
                    remove_learning_phase: remove,
                    rule: opts.rule,
                    anomaly_threshold: if *is_csv { opts.anomaly_threshold } else { None },
                    ..Default::default()
                };
                estimate_panel(panel, &o).with_context(|| format!("session {}", panel.session_id))
            };
            Ok([run(true)?, run(false)?])
        })
        .collect::<Result<_>>()?;

    let primary_idx = if opts.no_learning_phase { 1 } else { 0 };
    let mut records = Vec::new();
    for (v, (name, _)) in variants.iter().enumerate() {
        for rows in &per_panel {
            records.extend(rows[v].iter().map(|r| EstimateRecord::from_row(r, name, v == primary_idx)));
        }
    }
    let primary: Vec<EstimateRow> = per_panel.iter().flat_map(|rows| rows[primary_idx].clone()).collect();
    let alignment = alignment_records(&alignment_summary(&primary));
    let prism = primary
        .iter()
        .filter_map(|r| {
            let est = r.outcome.as_ref().ok()?;
            let class = classify_strategy(est);
            Some(PrismRecord {
                condition: r.condition.key(),
                session_id: r.session_id.clone(),
                agent: r.agent,
                alpha1: est.alpha1,
                alpha2: est.alpha2,
                beta: est.beta,
                strategy: class.label,
                distance: class.distance,
            })
        })
        .collect();
    Ok(EstimateOutput {
        records,
        alignment,
        prism,
    })
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_estimates(path: &Path) -> Result<Vec<EstimateRecord>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut rows = Vec::new();
    for (i, r) in rdr.deserialize::<EstimateRecord>().enumerate() {
        let r = r.with_context(|| format!("{} row {}", path.display(), i + 2))?;
        if r.schema_version != SCHEMA_VERSION {
            bail!(
                "{} row {}: schema_version {} is not supported (expected {SCHEMA_VERSION})",
                path.display(),
                i + 2,
                r.schema_version
            );
        }
        rows.push(r);
    }
    Ok(rows)
}

/// Writes the three tables and a console overview.
pub fn run(opts: &EstimateOptions, out: &mut dyn Write) -> Result<EstimateOutput> {
    let output = estimate(opts)?;
    ensure_dir(&opts.out)?;
    write_csv(&opts.out.join(ESTIMATES_FILE), &output.records)?;
    write_csv(&opts.out.join(ALIGNMENT_FILE), &output.alignment)?;
    write_csv(&opts.out.join(PRISM_FILE), &output.prism)?;

    let primary = if opts.no_learning_phase { VARIANT_FULL } else { VARIANT_REMOVED };
    writeln!(out, "variant {primary}")?;
    writeln!(out, "{:<40} {:>6} {:>8} {:>9} {:>9}", "condition", "agents", "feasible", "mean beta", "benchmark")?;
    for a in &output.alignment {
        let mean = a.mean_beta.map_or("-".to_string(), |m| format!("{m:.3}"));
        writeln!(
            out,
            "{:<40} {:>6} {:>8} {:>9} {:>9.2}",
            a.condition, a.n_agents, a.n_feasible, mean, a.human_benchmark_beta
        )?;
        if !a.reasons.is_empty() {
            writeln!(out, "  infeasible: {}", a.reasons)?;
        }
    }
    writeln!(out, "wrote {ESTIMATES_FILE}, {ALIGNMENT_FILE}, {PRISM_FILE} to {}", opts.out.display())?;
    Ok(output)
}

/// Learning-phase band from the command-line switches.
pub fn learning_rule(absolute: Option<f64>, relative: Option<f64>, strict: bool) -> Result<LearningRule> {
    let band = match (absolute, relative) {
        (Some(_), Some(_)) => bail!("give either an absolute or a relative band, not both"),
        (Some(w), None) if w > 0.0 && w.is_finite() => Band::Absolute(w),
        (None, Some(f)) if f > 0.0 && f.is_finite() => Band::Relative(f),
        (None, None) => LearningRule::default().band,
        _ => bail!("band width must be positive"),
    };
    Ok(LearningRule { band, strict })
}
