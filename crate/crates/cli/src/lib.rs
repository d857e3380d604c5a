//! Operator commands behind the `ltf` binary: single runs, condition
//! sweeps, estimation, plot-data export and the participant server.

pub mod estimate;
pub mod files;
pub mod plotdata;
pub mod run;
pub mod serve;
pub mod sweep;

use clap::ValueEnum;

/// `--backend` override for LLM slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendChoice {
    Live,
    Mock,
    Replay,
}
