//! Append-only JSONL session transcripts.
//!
//! Line 1 is a [`TranscriptHeader`] carrying the full session config and the
//! PRNG/prompt versions. Every following line is one [`RoundRecord`]. Each
//! record carries a SHA-256 checksum chained to the previous line, so a
//! truncated or edited file is detected and the offending round named.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agents::Correction;
use crate::market::{earnings, mean_forecast, price_from_mean};
use crate::session::SessionConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error("transcript i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("transcript header is missing or unreadable: {0}")]
    Header(String),
    #[error("integrity error in round {round}: {reason}")]
    Integrity { round: usize, reason: String },
    #[error("unsupported transcript schema version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },
}

impl TranscriptError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        TranscriptError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptHeader {
    pub kind: String,
    pub schema_version: u32,
    pub prng: String,
    pub prompt_version: String,
    pub config: SessionConfig,
}

impl TranscriptHeader {
    pub fn new(config: SessionConfig) -> Self {
        Self {
            kind: "header".to_string(),
            schema_version: SCHEMA_VERSION,
            prng: crate::rng::PRNG_VERSION.to_string(),
            prompt_version: crate::llm::PROMPT_VERSION.to_string(),
            config,
        }
    }
}

/// Raw request/response material for one LLM query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExchangeLog {
    /// Final user message of the request (the market-data message).
    pub user_message: String,
    /// Raw text of every reply received, in order; the last one was accepted.
    pub responses: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRoundEntry {
    pub agent: usize,
    pub prediction: f64,
    #[serde(default)]
    pub reasoning: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_digest: Option<String>,
    #[serde(default)]
    pub retry_count: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correction: Option<Correction>,
    pub earnings_delta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exchange: Option<ExchangeLog>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub kind: String,
    pub round: usize,
    pub agents: Vec<AgentRoundEntry>,
    pub mean_forecast: f64,
    pub noise_draw: f64,
    pub price_pre_clamp: f64,
    pub price: f64,
    #[serde(default)]
    pub checksum: String,
}

impl RoundRecord {
    pub fn predictions(&self) -> Vec<f64> {
        self.agents.iter().map(|a| a.prediction).collect()
    }

    /// Checks that price and payoffs follow from the stored forecasts and noise.
    pub fn verify_arithmetic(&self, config: &SessionConfig) -> Result<(), TranscriptError> {
        let fail = |reason: String| TranscriptError::Integrity {
            round: self.round,
            reason,
        };
        if self.agents.len() != config.agents.len() {
            return Err(fail(format!(
                "{} agent entries, config has {}",
                self.agents.len(),
                config.agents.len()
            )));
        }
        if self.agents.iter().enumerate().any(|(i, a)| a.agent != i) {
            return Err(fail("agent entries out of order".into()));
        }
        let mean = mean_forecast(&self.predictions()).map_err(|e| fail(e.to_string()))?;
        if mean != self.mean_forecast {
            return Err(fail(format!("mean forecast {} != recomputed {mean}", self.mean_forecast)));
        }
        let point = price_from_mean(&config.market, self.round, mean, self.noise_draw)
            .map_err(|e| fail(e.to_string()))?;
        if point.price != self.price || point.pre_clamp != self.price_pre_clamp {
            return Err(fail(format!("price {} != recomputed {}", self.price, point.price)));
        }
        for a in &self.agents {
            let e = earnings(self.price, a.prediction);
            if e != a.earnings_delta {
                return Err(fail(format!(
                    "agent {} earnings {} != recomputed {e}",
                    a.agent, a.earnings_delta
                )));
            }
        }
        Ok(())
    }
}

fn sha256_hex(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    hex::encode(h.finalize())
}

/// Checksum of `record` (with its own checksum field blanked) chained to `prev`.
pub fn record_checksum(record: &RoundRecord, prev: &str) -> String {
    let mut blank = record.clone();
    blank.checksum.clear();
    let body = serde_json::to_string(&blank).expect("round record serializes");
    sha256_hex(&[prev.as_bytes(), b"\n", body.as_bytes()])
}

pub fn header_checksum(line: &str) -> String {
    sha256_hex(&[line.as_bytes()])
}

/// Durable line writer; every append is flushed and synced before returning.
#[derive(Debug)]
pub struct TranscriptWriter {
    path: PathBuf,
    file: File,
}

impl TranscriptWriter {
    /// Creates (truncating) a transcript and writes its header. Returns the
    /// writer and the header checksum that seeds the record chain.
    pub fn create(path: &Path, header: &TranscriptHeader) -> Result<(Self, String), TranscriptError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| TranscriptError::io(parent, e))?;
        }
        let file = File::create(path).map_err(|e| TranscriptError::io(path, e))?;
        let mut w = Self {
            path: path.to_path_buf(),
            file,
        };
        let line = serde_json::to_string(header).expect("header serializes");
        w.write_line(&line)?;
        Ok((w, header_checksum(&line)))
    }

    /// Opens an existing transcript for appending, discarding any bytes past `valid_len`.
    pub fn append_at(path: &Path, valid_len: u64) -> Result<Self, TranscriptError> {
        let file = OpenOptions::new()
            .write(true)
            .open(path)
            .map_err(|e| TranscriptError::io(path, e))?;
        file.set_len(valid_len).map_err(|e| TranscriptError::io(path, e))?;
        let mut w = Self {
            path: path.to_path_buf(),
            file,
        };
        use std::io::Seek;
        w.file
            .seek(std::io::SeekFrom::End(0))
            .map_err(|e| TranscriptError::io(path, e))?;
        Ok(w)
    }

    pub fn append(&mut self, record: &RoundRecord) -> Result<(), TranscriptError> {
        let line = serde_json::to_string(record).expect("round record serializes");
        self.write_line(&line)
    }

    fn write_line(&mut self, line: &str) -> Result<(), TranscriptError> {
        let mut buf = Vec::with_capacity(line.len() + 1);
        buf.extend_from_slice(line.as_bytes());
        buf.push(b'\n');
        self.file
            .write_all(&buf)
            .and_then(|_| self.file.sync_data())
            .map_err(|e| TranscriptError::io(&self.path, e))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// A fully parsed and verified transcript.
#[derive(Debug, Clone, PartialEq)]
pub struct Transcript {
    pub header: TranscriptHeader,
    pub records: Vec<RoundRecord>,
    /// Checksum of the last line (header checksum when there are no records).
    pub last_checksum: String,
    /// Byte length of the verified content.
    pub byte_len: u64,
}

impl Transcript {
    pub fn is_complete(&self) -> bool {
        self.records.len() >= self.header.config.rounds
    }

    pub fn prices(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.price).collect()
    }

    /// Per-agent forecast series, chronological.
    pub fn forecasts_by_agent(&self) -> Vec<Vec<f64>> {
        let n = self.header.config.agents.len();
        (0..n)
            .map(|i| self.records.iter().map(|r| r.agents[i].prediction).collect())
            .collect()
    }
}

/// Reads and verifies a transcript: header, checksum chain, round numbering
/// and the price/payoff arithmetic of every record.
pub fn read_transcript(path: &Path) -> Result<Transcript, TranscriptError> {
    let file = File::open(path).map_err(|e| TranscriptError::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut line = String::new();
    let mut byte_len = 0u64;

    let n = reader.read_line(&mut line).map_err(|e| TranscriptError::io(path, e))?;
    if n == 0 || !line.ends_with('\n') {
        return Err(TranscriptError::Header("empty or truncated header line".into()));
    }
    byte_len += n as u64;
    let header_line = line.trim_end_matches('\n').to_string();
    let header: TranscriptHeader =
        serde_json::from_str(&header_line).map_err(|e| TranscriptError::Header(e.to_string()))?;
    if header.kind != "header" {
        return Err(TranscriptError::Header(format!("first line has kind {:?}", header.kind)));
    }
    if header.schema_version != SCHEMA_VERSION {
        return Err(TranscriptError::SchemaVersion {
            found: header.schema_version,
            expected: SCHEMA_VERSION,
        });
    }
    let mut prev = header_checksum(&header_line);
    let mut records = Vec::new();

    loop {
        line.clear();
        let n = reader.read_line(&mut line).map_err(|e| TranscriptError::io(path, e))?;
        if n == 0 {
            break;
        }
        let round = records.len() + 1;
        let integrity = |reason: String| TranscriptError::Integrity { round, reason };
        if !line.ends_with('\n') {
            return Err(integrity("truncated record (no line terminator)".into()));
        }
        let text = line.trim_end_matches('\n');
        if text.trim().is_empty() {
            return Err(integrity("blank line".into()));
        }
        let record: RoundRecord =
            serde_json::from_str(text).map_err(|e| integrity(format!("unparseable record: {e}")))?;
        if record.kind != "round" {
            return Err(integrity(format!("unexpected line kind {:?}", record.kind)));
        }
        if record.round != round {
            return Err(integrity(format!("record numbered {}", record.round)));
        }
        let expected = record_checksum(&record, &prev);
        if record.checksum != expected {
            return Err(integrity("checksum mismatch".into()));
        }
        record.verify_arithmetic(&header.config)?;
        prev = expected;
        byte_len += n as u64;
        records.push(record);
    }
    if records.len() > header.config.rounds {
        return Err(TranscriptError::Integrity {
            round: records.len(),
            reason: format!("more records than the configured {} rounds", header.config.rounds),
        });
    }

    Ok(Transcript {
        header,
        records,
        last_checksum: prev,
        byte_len,
    })
}

/// SHA-256 of a file's bytes.
pub fn file_digest(path: &Path) -> Result<String, TranscriptError> {
    let bytes = std::fs::read(path).map_err(|e| TranscriptError::io(path, e))?;
    Ok(sha256_hex(&[&bytes]))
}
