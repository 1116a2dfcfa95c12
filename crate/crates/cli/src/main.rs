//! `rdsuite` — regression-discontinuity estimation runs, sensitivity sweeps,
//! balance tests, plot data, and the skill-premium pipeline.
//!
//! Exit codes: 0 on success, 2 on input/data errors, 3 on estimation errors.

mod commands;
mod config;
mod data;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::*;

#[derive(Parser, Debug)]
#[command(name = "rdsuite", version, about = "Regression-discontinuity analysis toolkit")]
struct Cli {
    /// RNG seed for bootstrap-bearing commands.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Re-run from a saved resolved-config file; other flags are ignored.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Link districts, construct the person-level sample, write exclusions.
    Ingest(IngestArgs),
    /// One sharp or fuzzy estimation run.
    Estimate(EstimateArgs),
    /// Re-estimate at every candidate threshold with fresh bandwidths.
    SweepThreshold(SweepArgs),
    /// Vary the bandwidth at a fixed threshold, holding the selected ratio.
    SweepBandwidth(SweepArgs),
    /// Discontinuity p-values for predetermined covariates at candidate
    /// thresholds.
    Balance(BalanceArgs),
    /// Binned discontinuity-plot data (or a treatment-fraction histogram).
    Plot(PlotArgs),
    /// Skill premia, GE effect, and elasticities, with a clustered bootstrap.
    Ge(GeArgs),
    /// Bootstrap a sharp or fuzzy estimate.
    Bootstrap(BootstrapArgs),
}

fn resolved_config(cli: &Cli) -> Result<RunConfig, rdsuite_core::Error> {
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path)?;
        let loaded: RunConfig = serde_json::from_str(&text)
            .map_err(|e| rdsuite_core::Error::Schema(format!("bad config file: {e}")))?;
        let requested = match &cli.command {
            Command::Ingest(_) => "ingest",
            Command::Estimate(_) => "estimate",
            Command::SweepThreshold(_) => "sweep-threshold",
            Command::SweepBandwidth(_) => "sweep-bandwidth",
            Command::Balance(_) => "balance",
            Command::Plot(_) => "plot",
            Command::Ge(_) => "ge",
            Command::Bootstrap(_) => "bootstrap",
        };
        if loaded.command_name() != requested {
            return Err(rdsuite_core::Error::Schema(format!(
                "config file holds a '{}' run but the command line says '{requested}'",
                loaded.command_name()
            )));
        }
        return Ok(loaded);
    }
    Ok(match &cli.command {
        Command::Ingest(a) => RunConfig::Ingest {
            seed: cli.seed,
            args: a.clone(),
        },
        Command::Estimate(a) => RunConfig::Estimate {
            seed: cli.seed,
            args: a.clone(),
        },
        Command::SweepThreshold(a) => RunConfig::SweepThreshold {
            seed: cli.seed,
            args: a.clone(),
        },
        Command::SweepBandwidth(a) => RunConfig::SweepBandwidth {
            seed: cli.seed,
            args: a.clone(),
        },
        Command::Balance(a) => RunConfig::Balance {
            seed: cli.seed,
            args: a.clone(),
        },
        Command::Plot(a) => RunConfig::Plot {
            seed: cli.seed,
            args: a.clone(),
        },
        Command::Ge(a) => RunConfig::Ge {
            seed: cli.seed,
            args: a.clone(),
        },
        Command::Bootstrap(a) => RunConfig::Bootstrap {
            seed: cli.seed,
            args: a.clone(),
        },
    })
}

fn run(cli: &Cli) -> Result<(), rdsuite_core::Error> {
    if cli.workers > 0 {
        // Ignore the error if a pool already exists (e.g. repeated init).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.workers)
            .build_global();
    }
    std::fs::create_dir_all(&cli.out)?;
    let config = resolved_config(cli)?;
    let out = cli.out.as_path();
    match &config {
        RunConfig::Ingest { seed, args } => commands::cmd_ingest(out, *seed, args),
        RunConfig::Estimate { seed, args } => commands::cmd_estimate(out, *seed, args),
        RunConfig::SweepThreshold { seed, args } => commands::cmd_sweep_threshold(out, *seed, args),
        RunConfig::SweepBandwidth { seed, args } => commands::cmd_sweep_bandwidth(out, *seed, args),
        RunConfig::Balance { seed, args } => commands::cmd_balance(out, *seed, args),
        RunConfig::Plot { seed, args } => commands::cmd_plot(out, *seed, args),
        RunConfig::Ge { seed, args } => commands::cmd_ge(out, *seed, args),
        RunConfig::Bootstrap { seed, args } => commands::cmd_bootstrap(out, *seed, args),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_data_error() || matches!(e, rdsuite_core::Error::InvalidInput(_)) {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
