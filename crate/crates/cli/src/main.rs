//! `soir`: fit scalar-on-image regressions, run simulation studies,
//! measure coefficient images and summarise study tables.

mod commands;
mod config;
mod heatmap;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use soir::estimators::Profile;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("input: {0}")]
    Input(String),
    #[error("{0}")]
    AllFailed(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Input(_) => 2,
            CliError::AllFailed(_) => 3,
            CliError::Runtime(_) => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProfileArg {
    Paper,
    Desk,
}

#[derive(Debug, Parser)]
#[command(name = "soir", version, about = "Scalar-on-image regression toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON or `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    profile: Option<ProfileArg>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the configured methods to an image dataset.
    Fit,
    /// Run a simulation study.
    Simulate,
    /// Compute the measures of a single coefficient image.
    Measure,
    /// Summarise a study table.
    Report,
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let overrides = config::Overrides {
        seed: cli.seed,
        out: cli.out.clone(),
        profile: cli.profile.map(|p| match p {
            ProfileArg::Paper => Profile::Paper,
            ProfileArg::Desk => Profile::Desk,
        }),
    };
    let cfg = config::load_config(cli.config.as_deref(), &overrides)?;
    match cli.command {
        Command::Fit => commands::cmd_fit(&cfg),
        Command::Simulate => commands::cmd_simulate(&cfg),
        Command::Measure => commands::cmd_measure(&cfg),
        Command::Report => commands::cmd_report(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("soir: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
