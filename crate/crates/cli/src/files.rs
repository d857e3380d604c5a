//! Input discovery and small file helpers shared by the commands.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ltf_core::session::SessionConfig;
use ltf_core::transcript::TranscriptHeader;

/// A `--config` argument: either a config document or a recorded transcript.
#[derive(Debug, Clone)]
pub enum ConfigSource {
    Config(SessionConfig),
    Transcript { path: PathBuf, header: TranscriptHeader },
}

impl ConfigSource {
    pub fn config(&self) -> &SessionConfig {
        match self {
            ConfigSource::Config(c) => c,
            ConfigSource::Transcript { header, .. } => &header.config,
        }
    }
}

/// First line of a file parsed as a transcript header, if it is one.
pub fn peek_header(path: &Path) -> Result<Option<serde_json::Value>> {
    let file = fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut line = String::new();
    BufReader::new(file)
        .read_line(&mut line)
        .with_context(|| format!("cannot read {}", path.display()))?;
    match serde_json::from_str::<serde_json::Value>(line.trim_end()) {
        Ok(v) if v.get("kind").and_then(|k| k.as_str()) == Some("header") => Ok(Some(v)),
        _ => Ok(None),
    }
}

pub fn load_config_source(path: &Path) -> Result<ConfigSource> {
    if let Some(v) = peek_header(path)? {
        let header: TranscriptHeader = serde_json::from_value(v)
            .with_context(|| format!("{}: unreadable transcript header", path.display()))?;
        return Ok(ConfigSource::Transcript {
            path: path.to_path_buf(),
            header,
        });
    }
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    // Validation waits until command-line overrides are applied.
    let config: SessionConfig =
        serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
    Ok(ConfigSource::Config(config))
}

/// Expands directories into their `*.jsonl` files; the result is sorted.
pub fn collect_transcripts(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for input in inputs {
        if input.is_dir() {
            for entry in fs::read_dir(input).with_context(|| format!("cannot list {}", input.display()))? {
                let path = entry?.path();
                if path.extension().is_some_and(|e| e == "jsonl") {
                    out.push(path);
                }
            }
        } else if input.exists() {
            out.push(input.clone());
        } else {
            bail!("{} does not exist", input.display());
        }
    }
    out.sort();
    out.dedup();
    Ok(out)
}

/// Session ids become file names, so keep them to a safe alphabet.
pub fn check_session_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id.len() <= 128
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if !ok {
        bail!("session_id {id:?} must be 1-128 characters of letters, digits, '-', '_' or '.'");
    }
    Ok(())
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    fs::write(&tmp, bytes).with_context(|| format!("cannot write {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("cannot move {} into place", path.display()))?;
    Ok(())
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn session_ids() {
        assert!(check_session_id("sweep-negative-m3-t0.7-r0").is_ok());
        assert!(check_session_id("../etc").is_err());
        assert!(check_session_id("a/b").is_err());
        assert!(check_session_id("").is_err());
    }

    #[test]
    fn directories_expand_to_sorted_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["b.jsonl", "a.jsonl", "notes.txt"] {
            fs::write(dir.path().join(name), "").unwrap();
        }
        let got = collect_transcripts(&[dir.path().to_path_buf()]).unwrap();
        let names: Vec<_> = got.iter().map(|p| p.file_name().unwrap().to_str().unwrap()).collect();
        assert_eq!(names, ["a.jsonl", "b.jsonl"]);
        assert!(collect_transcripts(&[dir.path().join("missing")]).is_err());
    }
}
