use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use csi_mos::cli::{self, Overrides};
use csi_mos::Error;

/// Probabilistic clear-sky-index forecasts from NWP output.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated engines, e.g. GA,QR,QRF.
    #[arg(long)]
    engines: Option<String>,
    /// Root seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit every engine on every cross-validation slice.
    Fit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Forecast the held-out folds with the fitted models.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score the forecasts.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build comparison tables from a run directory.
    Report {
        /// Run directory holding reports/ and models/.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn config(common: &Common) -> csi_mos::Result<csi_mos::harness::ExperimentConfig> {
    let overrides = Overrides {
        engines: common.engines.as_deref().map(cli::parse_engines).transpose()?,
        seed: common.seed,
    };
    cli::load_config(common.config.as_deref(), &overrides)
}

fn run(command: Command) -> csi_mos::Result<()> {
    match command {
        Command::Synth { common, out } => {
            let c = cli::cmd_synth(&config(&common)?, &out)?;
            println!("stations: {}\nobservations: {}\nfields: {}", c.stations, c.observations, c.fields);
        }
        Command::Fit { common, data, out, jobs } => {
            let s = cli::cmd_fit(&config(&common)?, &data, &out, jobs)?;
            println!(
                "slices: {} (skipped {})\nmodels: {}\nfailed cells: {}",
                s.slices, s.skipped, s.models, s.failures
            );
        }
        Command::Predict { common, data, out } => {
            for (engine, n) in cli::cmd_predict(&config(&common)?, &data, &out)? {
                println!("{engine}: {n} forecasts");
            }
        }
        Command::Verify { common, out } => {
            let n = cli::cmd_verify(&config(&common)?, &out)?;
            println!("verified rows: {n}");
        }
        Command::Report { data, out } => {
            for p in cli::cmd_report(&data, &out)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let parsed = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match std::panic::catch_unwind(|| run(parsed.command)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(_) => ExitCode::from(3),
    }
}

fn exit_code(e: &Error) -> u8 {
    e.exit_code() as u8
}
