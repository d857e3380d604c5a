//! `ltf sweep`: every feedback × memory × temperature cell, replicated,
//! with a manifest that lets an interrupted sweep pick up where it stopped.

use std::path::{Path, PathBuf};
use std::sync::Mutex;

use anyhow::{bail, Context, Result};
use ltf_core::agents::HeuristicSpec;
use ltf_core::llm::LlmAgentConfig;
use ltf_core::market::{FeedbackType, MarketSpec};
use ltf_core::rng::SplitMix64;
use ltf_core::session::{run_session, resume_session, AgentPolicy, BackendConfig, SessionConfig};
use ltf_core::transcript::{file_digest, read_transcript, SCHEMA_VERSION};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::files::{check_session_id, ensure_dir, write_atomic};
use crate::run::default_mock_backend;
use crate::BackendChoice;

pub const MANIFEST_FILE: &str = "manifest.json";

fn one() -> usize {
    1
}
fn fifty() -> usize {
    50
}
fn six() -> usize {
    6
}
fn schema() -> u32 {
    SCHEMA_VERSION
}

/// Who plays in every session of the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SweepPolicy {
    /// `agents` identical LLM agents; memory and temperature come from the cell.
    Llm {
        model_id: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_retries: Option<u32>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        request_timeout_secs: Option<u64>,
    },
    /// A fixed population of scripted agents, one entry per slot.
    Scripted { agents: Vec<HeuristicSpec> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default = "schema")]
    pub schema_version: u32,
    pub name: String,
    pub feedback: Vec<FeedbackType>,
    #[serde(default)]
    pub memory: Vec<usize>,
    #[serde(default)]
    pub temperature: Vec<f64>,
    #[serde(default = "one")]
    pub replications: usize,
    pub base_seed: u64,
    #[serde(default = "fifty")]
    pub rounds: usize,
    /// Population size for LLM policies.
    #[serde(default = "six")]
    pub agents: usize,
    pub policy: SweepPolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend: Option<BackendConfig>,
    /// Market shock sd; the market default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_sd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

/// One (feedback, memory, temperature) combination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub index: usize,
    pub feedback: FeedbackType,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub memory: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Pending,
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub cell: Cell,
    pub replication: usize,
    pub seed: u64,
    pub session_id: String,
    /// Relative to the manifest's directory.
    pub transcript: String,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub spec: SweepSpec,
    pub runs: Vec<ManifestEntry>,
}

impl SweepSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: SweepSpec = serde_json::from_str(text).context("invalid sweep spec")?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            bail!("schema_version {} is not supported (expected {SCHEMA_VERSION})", self.schema_version);
        }
        check_session_id(&self.name).context("name")?;
        if self.feedback.is_empty() {
            bail!("feedback: list must not be empty");
        }
        if self.replications == 0 {
            bail!("replications: must be at least 1");
        }
        match &self.policy {
            SweepPolicy::Llm { .. } => {
                if self.memory.is_empty() {
                    bail!("memory: list must not be empty for an llm policy");
                }
                if self.temperature.is_empty() {
                    bail!("temperature: list must not be empty for an llm policy");
                }
                if self.agents == 0 {
                    bail!("agents: must be at least 1");
                }
            }
            SweepPolicy::Scripted { agents } => {
                if !self.memory.is_empty() || !self.temperature.is_empty() {
                    bail!("memory/temperature: only apply to llm policies");
                }
                if agents.is_empty() {
                    bail!("policy.agents: list must not be empty");
                }
            }
        }
        // Build one config per cell so field errors surface before anything runs.
        for cell in self.cells() {
            self.session_config(&cell, 0).validate()?;
        }
        Ok(())
    }

    /// Cells in feedback-major, then memory, then temperature order.
    pub fn cells(&self) -> Vec<Cell> {
        let memory: Vec<Option<usize>> = match self.policy {
            SweepPolicy::Llm { .. } => self.memory.iter().copied().map(Some).collect(),
            SweepPolicy::Scripted { .. } => vec![None],
        };
        let temperature: Vec<Option<f64>> = match self.policy {
            SweepPolicy::Llm { .. } => self.temperature.iter().copied().map(Some).collect(),
            SweepPolicy::Scripted { .. } => vec![None],
        };
        let mut cells = Vec::new();
        for &feedback in &self.feedback {
            for &m in &memory {
                for &t in &temperature {
                    cells.push(Cell {
                        index: cells.len(),
                        feedback,
                        memory: m,
                        temperature: t,
                    });
                }
            }
        }
        cells
    }

    /// Seed of one run, a function of the base seed, cell and replication only.
    pub fn run_seed(&self, cell: usize, replication: usize) -> u64 {
        SplitMix64::derive(self.base_seed, &self.name, &format!("cell-{cell}"), replication as u64).next_u64()
    }

    pub fn session_id(&self, cell: &Cell, replication: usize) -> String {
        let mut id = format!("{}-{}", self.name, cell.feedback);
        if let Some(m) = cell.memory {
            id.push_str(&format!("-m{m}"));
        }
        if let Some(t) = cell.temperature {
            id.push_str(&format!("-t{t}"));
        }
        format!("{id}-r{replication}")
    }

    pub fn session_config(&self, cell: &Cell, replication: usize) -> SessionConfig {
        let agents = match &self.policy {
            SweepPolicy::Llm {
                model_id,
                max_retries,
                request_timeout_secs,
            } => {
                let mut c = LlmAgentConfig::new(
                    model_id.clone(),
                    cell.temperature.unwrap_or_default(),
                    cell.memory.unwrap_or_default(),
                );
                if let Some(r) = max_retries {
                    c.max_retries = *r;
                }
                if let Some(t) = request_timeout_secs {
                    c.request_timeout_secs = *t;
                }
                vec![AgentPolicy::Llm(c); self.agents]
            }
            SweepPolicy::Scripted { agents } => agents.iter().cloned().map(AgentPolicy::Heuristic).collect(),
        };
        let mut market = MarketSpec::new(cell.feedback);
        if let Some(sd) = self.noise_sd {
            market = market.with_noise_sd(sd);
        }
        let mut config = SessionConfig::new(
            self.session_id(cell, replication),
            self.run_seed(cell.index, replication),
            market,
            agents,
        )
        .with_rounds(self.rounds);
        if matches!(self.policy, SweepPolicy::Llm { .. }) {
            config.backend = self.backend.clone();
        }
        config
    }

    fn uses_live_backend(&self) -> bool {
        matches!(self.policy, SweepPolicy::Llm { .. }) && !matches!(self.backend, Some(BackendConfig::Mock { .. }))
    }
}

#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub spec: PathBuf,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub parallelism: Option<usize>,
    pub backend: Option<BackendChoice>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepReport {
    pub out_dir: PathBuf,
    pub executed: Vec<String>,
    pub skipped: Vec<String>,
    pub failed: Vec<(String, String)>,
}

impl SweepReport {
    pub fn ok(&self) -> bool {
        self.failed.is_empty()
    }
}

/// Live sweeps stay sequential unless told otherwise, to respect provider rate limits.
pub fn default_parallelism(spec: &SweepSpec) -> usize {
    if spec.uses_live_backend() {
        1
    } else {
        std::thread::available_parallelism().map_or(4, |n| n.get()).min(8)
    }
}

pub fn load_spec(opts: &SweepOptions) -> Result<SweepSpec> {
    let text =
        std::fs::read_to_string(&opts.spec).with_context(|| format!("cannot read {}", opts.spec.display()))?;
    let mut spec = SweepSpec::from_json(&text).with_context(|| format!("in {}", opts.spec.display()))?;
    if let Some(seed) = opts.seed {
        spec.base_seed = seed;
    }
    match opts.backend {
        None => {}
        Some(BackendChoice::Mock) => {
            if !matches!(spec.backend, Some(BackendConfig::Mock { .. })) {
                spec.backend = Some(default_mock_backend());
            }
        }
        Some(BackendChoice::Live) => {
            if !matches!(spec.backend, Some(BackendConfig::Live { .. })) {
                spec.backend = Some(BackendConfig::Live {
                    endpoint: ltf_core::llm::DEFAULT_ENDPOINT.into(),
                    api_key_env: ltf_core::llm::DEFAULT_API_KEY_ENV.into(),
                });
            }
        }
        Some(BackendChoice::Replay) => {
            bail!("--backend replay is not available for sweeps; replay single transcripts with `ltf run`")
        }
    }
    spec.validate()?;
    Ok(spec)
}

fn planned_entries(spec: &SweepSpec) -> Vec<ManifestEntry> {
    let mut runs = Vec::new();
    for cell in spec.cells() {
        for rep in 0..spec.replications {
            let session_id = spec.session_id(&cell, rep);
            runs.push(ManifestEntry {
                cell,
                replication: rep,
                seed: spec.run_seed(cell.index, rep),
                transcript: format!("{session_id}.jsonl"),
                session_id,
                status: RunStatus::Pending,
                digest: None,
                error: None,
            });
        }
    }
    runs
}

fn read_manifest(path: &Path) -> Result<Option<Manifest>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let m: Manifest = serde_json::from_str(&text).with_context(|| format!("unreadable manifest {}", path.display()))?;
    Ok(Some(m))
}

fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

enum Outcome {
    Skipped(String),
    Executed(String),
}

/// Brings one run to completion: skip when the manifest and file agree,
/// resume a partial transcript, start fresh when there is none.
fn execute(spec: &SweepSpec, dir: &Path, entry: &ManifestEntry, previous: Option<&ManifestEntry>) -> Result<Outcome> {
    let path = dir.join(&entry.transcript);
    let config = spec.session_config(&entry.cell, entry.replication);
    if path.exists() {
        if let Some(prev) = previous.filter(|p| p.status == RunStatus::Complete) {
            let digest = file_digest(&path)?;
            if prev.digest.as_deref() == Some(digest.as_str()) {
                return Ok(Outcome::Skipped(digest));
            }
        }
        let t = read_transcript(&path).with_context(|| format!("existing {}", path.display()))?;
        if t.header.config != config {
            bail!("{} belongs to a different configuration", path.display());
        }
        if !t.is_complete() {
            resume_session(&path)?;
            return Ok(Outcome::Executed(file_digest(&path)?));
        }
        return Ok(Outcome::Skipped(file_digest(&path)?));
    }
    run_session(config, Some(&path))?;
    Ok(Outcome::Executed(file_digest(&path)?))
}

pub fn run_sweep(spec: &SweepSpec, out: &Path, parallelism: usize) -> Result<SweepReport> {
    ensure_dir(out)?;
    let manifest_path = out.join(MANIFEST_FILE);
    let previous = read_manifest(&manifest_path)?;
    if let Some(prev) = &previous {
        if prev.spec != *spec {
            bail!(
                "{} holds a different sweep; use a fresh output directory",
                manifest_path.display()
            );
        }
    }
    let planned = planned_entries(spec);
    let manifest = Mutex::new(Manifest {
        schema_version: SCHEMA_VERSION,
        spec: spec.clone(),
        runs: planned.clone(),
    });
    write_manifest(&manifest_path, &manifest.lock().unwrap())?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .context("cannot start worker pool")?;
    let results: Vec<(String, Result<Outcome>)> = pool.install(|| {
        planned
            .par_iter()
            .enumerate()
            .map(|(i, entry)| {
                let prev = previous
                    .as_ref()
                    .and_then(|m| m.runs.iter().find(|r| r.session_id == entry.session_id));
                let result = execute(spec, out, entry, prev);
                let mut m = manifest.lock().unwrap();
                let slot = &mut m.runs[i];
                match &result {
                    Ok(Outcome::Skipped(d) | Outcome::Executed(d)) => {
                        slot.status = RunStatus::Complete;
                        slot.digest = Some(d.clone());
                    }
                    Err(e) => {
                        slot.status = RunStatus::Failed;
                        slot.error = Some(format!("{e:#}"));
                    }
                }
                if let Err(e) = write_manifest(&manifest_path, &m) {
                    log::warn!("manifest update failed: {e:#}");
                }
                (entry.session_id.clone(), result)
            })
            .collect()
    });
    write_manifest(&manifest_path, &manifest.into_inner().unwrap())?;

    let mut report = SweepReport {
        out_dir: out.to_path_buf(),
        ..Default::default()
    };
    for (id, r) in results {
        match r {
            Ok(Outcome::Skipped(_)) => report.skipped.push(id),
            Ok(Outcome::Executed(_)) => report.executed.push(id),
            Err(e) => report.failed.push((id, format!("{e:#}"))),
        }
    }
    Ok(report)
}

/// Output directory: `--out`, else the spec's `output_dir`, else the sweep name.
pub fn output_dir(spec: &SweepSpec, out: Option<&Path>) -> PathBuf {
    out.map(Path::to_path_buf)
        .or_else(|| spec.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(&spec.name))
}
