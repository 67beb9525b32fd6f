//! Subcommands of the `burstlab` tool. Each returns the [`RunManifest`] it
//! wrote, or a [`CliError`] whose class decides the exit code
//! (0 ok, 2 input, 3 I/O, 4 numerical).

pub mod commands;
pub mod error;
pub mod files;
pub mod manifest;
pub mod model;

use std::path::PathBuf;

use burstlab::evaluate::PredictionMode;
use clap::{Parser, Subcommand};

pub use error::{CliError, CliResult};
pub use manifest::RunManifest;

#[derive(Debug, Parser)]
#[command(name = "burstlab", version, about = "Joint Hawkes fitting for assignment × student activity")]
pub struct Cli {
    /// Seed for randomized steps (overrides the spec seed in `simulate`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Per-iteration optimizer trace as JSON lines (`fit`).
    #[arg(long, global = true, value_name = "PATH")]
    pub trace: Option<PathBuf>,
    /// Worker threads for per-pair computations.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Prediction mode for `predict` and `evaluate`.
    #[arg(long, global = true, value_parser = parse_mode, default_value = "history_only")]
    pub mode: PredictionMode,
    #[command(subcommand)]
    pub command: Command,
}

fn parse_mode(s: &str) -> Result<PredictionMode, String> {
    s.parse().map_err(|e: burstlab::Error| e.to_string())
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset, its ground truth, and a hold-out split.
    Simulate {
        /// Synthetic spec JSON; defaults apply to omitted fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit A, U, Z to an events CSV.
    Fit {
        #[arg(long)]
        events: PathBuf,
        /// Fit configuration JSON; defaults apply to omitted fields.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Id map JSON fixing the assignment and student universe.
        #[arg(long)]
        ids: Option<PathBuf>,
        /// Common observation horizon in hours (default: each pair's last event).
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Expected event counts over windows from fitted parameters.
    Predict {
        /// Directory written by `fit`.
        #[arg(long)]
        params: PathBuf,
        /// Events the fit was trained on (the history).
        #[arg(long)]
        events: PathBuf,
        /// CSV `assignment_id,student_id,window_start,window_end`.
        #[arg(long, conflicts_with = "split", required_unless_present = "split")]
        windows: Option<PathBuf>,
        /// Take windows from a split manifest instead.
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score fitted parameters against ground truth and held-out counts.
    Evaluate {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        split: PathBuf,
        /// Training events (default: the events recorded in the fit manifest).
        #[arg(long)]
        events: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Inter-arrival statistics per pair against a matched Poisson process.
    Diagnose {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write tidy `(pair, source, metric, bin, value)` rows, histograms included.
        #[arg(long)]
        tidy: Option<PathBuf>,
    },
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> CliResult<RunManifest> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Input("--threads must be at least 1".into()));
        }
        // Fails only if a pool already exists, e.g. when called twice in one process.
        if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            log::warn!("thread pool already initialised; --threads ignored");
        }
    }
    let ctx = commands::Context {
        seed: cli.seed,
        trace: cli.trace,
        threads: cli.threads,
        mode: cli.mode,
    };
    match cli.command {
        Command::Simulate { spec, out } => commands::simulate::run(&ctx, spec.as_deref(), &out),
        Command::Fit { events, config, ids, horizon, out } => {
            commands::fit::run(&ctx, &events, config.as_deref(), ids.as_deref(), horizon, &out)
        }
        Command::Predict { params, events, windows, split, out } => {
            let source = match (windows, split) {
                (Some(w), _) => commands::predict::WindowSource::Csv(w),
                (None, Some(s)) => commands::predict::WindowSource::Split(s),
                (None, None) => return Err(CliError::Input("either --windows or --split is required".into())),
            };
            commands::predict::run(&ctx, &params, &events, &source, &out)
        }
        Command::Evaluate { params, truth, split, events, out } => {
            commands::evaluate::run(&ctx, &params, truth.as_deref(), &split, events.as_deref(), &out)
        }
        Command::Diagnose { events, out, tidy } => commands::diagnose::run(&ctx, &events, &out, tidy.as_deref()),
    }
}
