//! `pgrecruit`: recruitment simulation, forecasting, fitting, homogeneity
//! tests, power analysis and interim re-projection.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;
mod ingest;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use crate::commands::Context;
use crate::config::ScenarioConfig;
use crate::error::{CliError, CliResult};
use crate::output::Output;

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  1  I/O error
  2  usage error (missing input, empty centre list, bad flag)
  3  parse error (event file or config)
  4  domain error (invalid parameter or degenerate data)
  5  numeric error (degenerate fit, search bound exceeded)";

#[derive(Debug, Parser)]
#[command(name = "pgrecruit", version, about = "Poisson-gamma recruitment modelling", after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Scenario file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Event file: centre_id,country,activation_day,enrollment_day.
    #[arg(long, global = true)]
    events: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Monte Carlo runs.
    #[arg(long, global = true)]
    runs: Option<usize>,
    /// Worker threads for Monte Carlo work (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "pgrecruit-out")]
    out: PathBuf,
    /// Two-sided predictive probability of the bounds.
    #[arg(long, global = true)]
    confidence: Option<f64>,
    /// Significance level of the homogeneity tests.
    #[arg(long, global = true)]
    delta: Option<f64>,
    /// Window length for the window strategy and default test intervals.
    #[arg(long, global = true)]
    window_days: Option<f64>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Monte Carlo trajectories, completion days and one sample event file.
    Simulate,
    /// Analytic mean and predictive bounds per country and overall.
    Forecast,
    /// Maximum-likelihood rate parameters from an event file.
    Fit,
    /// Rate homogeneity tests between two intervals.
    Test,
    /// Threshold calibration, power and minimal centre counts.
    Power,
    /// Refit at an interim and forecast completion.
    Reproject,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Forecast => "forecast",
            Command::Fit => "fit",
            Command::Test => "test",
            Command::Power => "power",
            Command::Reproject => "reproject",
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(w) = cli.workers {
        if w == 0 {
            return Err(CliError::Usage("--workers must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let config = match &cli.config {
        Some(p) => ScenarioConfig::load(p)?,
        None => ScenarioConfig::default(),
    };
    let ctx = Context {
        seed: cli.seed.or(config.seed).unwrap_or(1),
        runs: cli.runs.or(config.runs),
        confidence: cli.confidence.or(config.confidence).unwrap_or(0.8),
        delta: cli.delta.or(config.delta).unwrap_or(pgrecruit::homogeneity::DEFAULT_DELTA),
        window_days: cli.window_days.or(config.window_days).unwrap_or(pgrecruit::reprojection::DEFAULT_WINDOW_DAYS),
        events_path: cli.events.clone(),
        config,
    };
    if !(ctx.window_days > 0.0) {
        return Err(CliError::Usage("--window-days must be > 0".into()));
    }

    let mut out = Output::new(&cli.out)?;
    match cli.command {
        Command::Simulate => commands::simulate(&ctx, &mut out)?,
        Command::Forecast => commands::forecast(&ctx, &mut out)?,
        Command::Fit => commands::fit(&ctx, &mut out)?,
        Command::Test => commands::test(&ctx, &mut out)?,
        Command::Power => commands::power(&ctx, &mut out)?,
        Command::Reproject => commands::reproject_cmd(&ctx, &mut out)?,
    }
    out.manifest(json!({
        "tool": "pgrecruit",
        "version": env!("CARGO_PKG_VERSION"),
        "command": cli.command.name(),
        "config_file": cli.config.as_ref().map(|p| p.display().to_string()),
        "events_file": cli.events.as_ref().map(|p| p.display().to_string()),
        "seed": ctx.seed,
        "runs": ctx.runs,
        "workers": cli.workers,
        "confidence": ctx.confidence,
        "delta": ctx.delta,
        "window_days": ctx.window_days,
        "config": ctx.config,
    }))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
