use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use ltf_cli::{estimate, plotdata, run, serve, sweep, BackendChoice};
use ltf_core::market::FeedbackType;

#[derive(Parser)]
#[command(name = "ltf", version, about = "Learning-to-forecast market experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one session and write its transcript.
    Run {
        /// Session config (JSON), or a recorded transcript with --backend replay.
        #[arg(long)]
        config: PathBuf,
        /// Directory for the transcript.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        backend: Option<BackendChoice>,
        /// Continue an existing transcript for this session.
        #[arg(long)]
        resume: bool,
    },
    /// Run every cell of a sweep spec; rerunning skips completed cells.
    Sweep {
        /// Sweep spec (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Output directory (default: the spec's output_dir, else its name).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the base seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Sessions run at once (default 1 for live backends).
        #[arg(long)]
        parallelism: Option<usize>,
        #[arg(long, value_enum)]
        backend: Option<BackendChoice>,
    },
    /// Estimate forecasting rules and write estimates, alignment and prism tables.
    Estimate {
        /// Transcript files or directories of transcripts.
        inputs: Vec<PathBuf>,
        /// Long-format CSV (round, agent, forecast, price) of external sessions.
        #[arg(long)]
        human_csv: Option<PathBuf>,
        /// Feedback type of CSV sessions without a feedback column.
        #[arg(long)]
        feedback: Option<FeedbackType>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Make the full-sample variant primary.
        #[arg(long)]
        no_learning_phase: bool,
        /// Learning band as an absolute price distance.
        #[arg(long, conflicts_with = "band_relative")]
        band_absolute: Option<f64>,
        /// Learning band as a fraction of the price (default 0.05).
        #[arg(long)]
        band_relative: Option<f64>,
        /// Use a strict inequality at the band edge.
        #[arg(long)]
        strict: bool,
        /// Drop CSV rows whose forecast misses the price by more than this.
        #[arg(long)]
        anomaly_threshold: Option<f64>,
        /// Worker threads.
        #[arg(long)]
        parallelism: Option<usize>,
    },
    /// Export tidy time-series and box-plot tables.
    Plotdata {
        /// Transcript files or directories.
        transcripts: Vec<PathBuf>,
        /// estimates.csv written by `ltf estimate`.
        #[arg(long)]
        estimates: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Host human-participant sessions over HTTP.
    Serve {
        /// Session config to create at startup.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory holding the session transcripts.
        #[arg(long, default_value = "sessions")]
        out: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn set_threads(n: Option<usize>) -> Result<()> {
    if let Some(n) = n {
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Run { config, out: dir, seed, backend, resume } => {
            let opts = run::RunOptions { config, out: dir, seed, backend, resume };
            run::run(&opts, &mut out)?;
        }
        Command::Sweep { config, out: dir, seed, parallelism, backend } => {
            let opts = sweep::SweepOptions { spec: config, out: dir, seed, parallelism, backend };
            let spec = sweep::load_spec(&opts)?;
            let dir = sweep::output_dir(&spec, opts.out.as_deref());
            let workers = parallelism.unwrap_or_else(|| sweep::default_parallelism(&spec));
            let report = sweep::run_sweep(&spec, &dir, workers)?;
            writeln!(
                out,
                "{} executed, {} already complete, {} failed; manifest {}",
                report.executed.len(),
                report.skipped.len(),
                report.failed.len(),
                dir.join(sweep::MANIFEST_FILE).display()
            )?;
            for (id, err) in &report.failed {
                writeln!(out, "failed {id}: {err}")?;
            }
            if !report.ok() {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Estimate {
            inputs,
            human_csv,
            feedback,
            out: dir,
            no_learning_phase,
            band_absolute,
            band_relative,
            strict,
            anomaly_threshold,
            parallelism,
        } => {
            set_threads(parallelism)?;
            let opts = estimate::EstimateOptions {
                inputs,
                human_csv,
                feedback,
                out: dir,
                no_learning_phase,
                rule: estimate::learning_rule(band_absolute, band_relative, strict)?,
                anomaly_threshold,
            };
            estimate::run(&opts, &mut out)?;
        }
        Command::Plotdata { transcripts, estimates, out: dir } => {
            plotdata::run(&plotdata::PlotOptions { transcripts, estimates, out: dir }, &mut out)?;
        }
        Command::Serve { config, out: dir, addr } => {
            drop(out);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve::run(serve::ServeOptions { addr, dir, config }))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}
