//! `evmarket`: synthetic data, federated demand learning, station clustering
//! and the contract market, driven from one JSON config.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use evmarket_cli::commands::{self, experiment::Experiment, train::Mode};
use evmarket_cli::config::RunConfig;
use evmarket_cli::output::{self, Report};

/// Exit status when an audit fails; configuration and I/O errors use 1.
const AUDIT_EXIT: u8 = 2;

#[derive(Parser)]
#[command(
    name = "evmarket",
    version,
    about = "EV charging demand learning and energy contract market"
)]
struct Cli {
    /// JSON run configuration; omitted fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding `paths.output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic transactions and station locations.
    GenData,
    /// Train the demand model and predict next-interval demand.
    Train {
        #[arg(long, value_enum, default_value = "dfel")]
        mode: Mode,
    },
    /// Size-constrained clustering of stations by location.
    Cluster,
    /// Solve the contract market and compare with the baselines.
    Market {
        /// `cs_id,predicted_mwh[,actual_mwh]`; defaults to the dfel output.
        #[arg(long)]
        demands: Option<PathBuf>,
    },
    /// Parameter sweeps and the tables behind every figure.
    Experiment {
        #[arg(long, value_enum)]
        name: Experiment,
        #[arg(long)]
        demands: Option<PathBuf>,
    },
    /// Print the effective configuration as JSON.
    ShowConfig,
}

fn run(cli: Cli) -> Result<(String, Report)> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(out) = cli.out {
        cfg.paths.output_dir = out;
    }
    cfg.validate()?;
    let started = chrono::Utc::now();
    let (name, report) = match &cli.command {
        Command::GenData => ("gen-data".to_string(), commands::data::gen_data(&cfg)?),
        Command::Train { mode } => (
            format!("train {}", mode.name()),
            commands::train::train(&cfg, *mode)?,
        ),
        Command::Cluster => ("cluster".to_string(), commands::train::cluster(&cfg)?),
        Command::Market { demands } => (
            "market".to_string(),
            commands::market::run(&cfg, demands.as_deref())?,
        ),
        Command::Experiment { name, demands } => (
            format!("experiment {name:?}"),
            commands::experiment::run(&cfg, *name, demands.as_deref())?,
        ),
        Command::ShowConfig => {
            println!("{}", serde_json::to_string_pretty(&cfg)?);
            return Ok(("show-config".into(), Report::default()));
        }
    };
    output::ensure_dir(&report.dir)?;
    output::write_metadata(&report.dir, &name, cfg.seed, started)?;
    Ok((name, report))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok((name, report)) => match output::write_failures(&report.dir, &name, &report.failures) {
            Ok(None) => ExitCode::SUCCESS,
            Ok(Some(json)) => {
                eprintln!("{json}");
                ExitCode::from(AUDIT_EXIT)
            }
            Err(e) => {
                eprintln!("error: {e:#}");
                ExitCode::FAILURE
            }
        },
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
