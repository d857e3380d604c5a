//! `ltf run`: one session from a config document.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use ltf_core::agents::{HeuristicSpec, Preset};
use ltf_core::session::{replay_config, BackendConfig, SessionConfig, SessionEngine};
use ltf_core::transcript::{file_digest, RoundRecord};

use crate::files::{check_session_id, ensure_dir, load_config_source, ConfigSource};
use crate::BackendChoice;

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub config: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub backend: Option<BackendChoice>,
    /// Continue an existing transcript instead of refusing to overwrite it.
    pub resume: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub session_id: String,
    pub transcript: PathBuf,
    pub rounds: usize,
    pub digest: String,
}

/// Default scripted stand-in when `--backend mock` overrides a config
/// that does not name one.
pub fn default_mock_backend() -> BackendConfig {
    BackendConfig::Mock {
        policy: HeuristicSpec::preset(Preset::Adaptive),
        temperature_noise: 0.5,
    }
}

/// Applies `--backend`. `replay` needs a recorded transcript as the source.
pub fn apply_backend(source: &ConfigSource, choice: Option<BackendChoice>) -> Result<SessionConfig> {
    let mut config = source.config().clone();
    match choice {
        None => {}
        Some(BackendChoice::Replay) => match source {
            ConfigSource::Transcript { path, .. } => {
                config = replay_config(path)?;
            }
            ConfigSource::Config(_) => {
                bail!("--backend replay needs a recorded transcript as --config, not a config document")
            }
        },
        Some(BackendChoice::Mock) => {
            if !matches!(config.backend, Some(BackendConfig::Mock { .. })) {
                config.backend = Some(default_mock_backend());
            }
        }
        Some(BackendChoice::Live) => {
            if !matches!(config.backend, Some(BackendConfig::Live { .. })) {
                config.backend = Some(BackendConfig::Live {
                    endpoint: ltf_core::llm::DEFAULT_ENDPOINT.into(),
                    api_key_env: ltf_core::llm::DEFAULT_API_KEY_ENV.into(),
                });
            }
        }
    }
    Ok(config)
}

fn transcript_name(config: &SessionConfig) -> String {
    match config.backend {
        Some(BackendConfig::Replay { .. }) => format!("{}.replay.jsonl", config.session_id),
        _ => format!("{}.jsonl", config.session_id),
    }
}

pub fn round_line(r: &RoundRecord) -> String {
    format!("round {:>3}  price {:>8.2}  mean forecast {:>8.2}", r.round, r.price, r.mean_forecast)
}

/// Runs (or resumes) the session and prints one line per round plus a summary.
pub fn run(opts: &RunOptions, out: &mut dyn Write) -> Result<RunReport> {
    let source = load_config_source(&opts.config)?;
    let mut config = apply_backend(&source, opts.backend)?;
    if let Some(seed) = opts.seed {
        config.seed = seed;
    }
    config
        .validate()
        .with_context(|| format!("invalid config {}", opts.config.display()))?;
    check_session_id(&config.session_id)?;
    if config.has_human_slots() && !matches!(config.backend, Some(BackendConfig::Replay { .. })) {
        bail!("config has human slots {:?}; host it with `ltf serve`", config.human_slots());
    }
    ensure_dir(&opts.out)?;
    let path = opts.out.join(transcript_name(&config));

    let mut engine = if path.exists() {
        if !opts.resume {
            bail!("{} already exists; pass --resume to continue it or choose another --out", path.display());
        }
        let engine = SessionEngine::resume(&path).with_context(|| format!("cannot resume {}", path.display()))?;
        if engine.config() != &config {
            bail!("{} was written by a different config", path.display());
        }
        writeln!(out, "resuming {} after round {}", config.session_id, engine.state().current_round)?;
        engine
    } else {
        SessionEngine::create(config, Some(&path))?
    };

    let mut io_err = None;
    let played = engine.run_to_end(|r| {
        if let Err(e) = writeln!(out, "{}", round_line(r)) {
            io_err.get_or_insert(e);
        }
    });
    if let Some(e) = io_err {
        return Err(e.into());
    }
    if let Err(e) = played {
        return Err(anyhow!(e).context(format!(
            "session {} aborted after {} rounds; partial transcript kept at {}",
            engine.config().session_id,
            engine.state().current_round,
            path.display()
        )));
    }
    let digest = file_digest(&path)?;
    write_summary(&engine, &path, &digest, out)?;
    Ok(RunReport {
        session_id: engine.config().session_id.clone(),
        transcript: path,
        rounds: engine.state().current_round,
        digest,
    })
}

fn write_summary(engine: &SessionEngine, path: &Path, digest: &str, out: &mut dyn Write) -> Result<()> {
    let config = engine.config();
    let prices = engine.state().price_series();
    let mean = prices.iter().sum::<f64>() / prices.len().max(1) as f64;
    writeln!(
        out,
        "session {} complete: {} rounds, {} feedback, mean price {:.2}, last price {:.2}",
        config.session_id,
        prices.len(),
        config.market.feedback,
        mean,
        prices.last().copied().unwrap_or(f64::NAN)
    )?;
    for (i, (agent, total)) in config.agents.iter().zip(&engine.state().earnings).enumerate() {
        writeln!(out, "  agent {i} {:<24} earnings {:>10.2}", agent.label(), total)?;
    }
    writeln!(out, "transcript {}", path.display())?;
    writeln!(out, "sha256 {digest}")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ltf_core::market::{FeedbackType, MarketSpec};
    use ltf_core::session::AgentPolicy;

    fn write_config(dir: &Path, config: &SessionConfig) -> PathBuf {
        let p = dir.join("config.json");
        std::fs::write(&p, serde_json::to_string_pretty(config).unwrap()).unwrap();
        p
    }

    fn opts(config: PathBuf, out: PathBuf) -> RunOptions {
        RunOptions { config, out, seed: None, backend: None, resume: false }
    }

    #[test]
    fn fundamentalists_print_sixty() {
        let dir = tempfile::tempdir().unwrap();
        let agents = vec![AgentPolicy::Heuristic(HeuristicSpec::preset(Preset::Fundamentalist)); 6];
        let config = SessionConfig::new("f", 1, MarketSpec::new(FeedbackType::Positive).with_noise_sd(0.0), agents)
            .with_rounds(5);
        let o = opts(write_config(dir.path(), &config), dir.path().join("out"));
        let mut buf = Vec::new();
        let report = run(&o, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().filter(|l| l.contains("price    60.00")).count(), 5);
        assert_eq!(report.rounds, 5);
        // A second run refuses to clobber the transcript.
        assert!(run(&o, &mut Vec::new()).is_err());
        let again = run(&RunOptions { resume: true, ..o }, &mut Vec::new()).unwrap();
        assert_eq!(again.digest, report.digest);
    }

    #[test]
    fn replay_needs_a_transcript() {
        let agents = vec![AgentPolicy::Heuristic(HeuristicSpec::preset(Preset::Naive)); 2];
        let config = SessionConfig::new("r", 1, MarketSpec::new(FeedbackType::Negative), agents);
        let source = ConfigSource::Config(config);
        assert!(apply_backend(&source, Some(BackendChoice::Replay)).is_err());
        let mocked = apply_backend(&source, Some(BackendChoice::Mock)).unwrap();
        assert_eq!(mocked.backend, Some(default_mock_backend()));
    }

    #[test]
    fn human_configs_are_refused() {
        let dir = tempfile::tempdir().unwrap();
        let config = SessionConfig::new("h", 1, MarketSpec::new(FeedbackType::Negative), vec![AgentPolicy::Human]);
        let o = opts(write_config(dir.path(), &config), dir.path().to_path_buf());
        let err = run(&o, &mut Vec::new()).unwrap_err().to_string();
        assert!(err.contains("ltf serve"), "{err}");
    }
}
