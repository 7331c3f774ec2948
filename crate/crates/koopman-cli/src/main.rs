mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::CliError;

/// Data-driven lifted linear predictors and dense-form MPC experiments.
#[derive(Parser)]
#[command(name = "koopman", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment definition (TOML); required by every subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the output path from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Data file format for datagen: csv | binary.
    #[arg(long, global = true)]
    format: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a seeded data-collection campaign and write the data set.
    Datagen,
    /// Fit a lifted linear model from a data set and write the model file.
    Fit,
    /// Roll out a model against the true simulator and write both paths.
    Predict,
    /// Run seeded prediction-comparison trials (or a lift-dimension sweep).
    Compare,
    /// Run a closed-loop MPC experiment and write the step log.
    Mpc,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let Some(config) = cli.config.as_deref() else {
        eprintln!("error: --config is required");
        return ExitCode::from(2);
    };
    let result = match cli.command {
        Command::Datagen => commands::datagen(config, cli.seed, cli.out, cli.format),
        Command::Fit => commands::fit(config, cli.seed, cli.out),
        Command::Predict => commands::predict(config, cli.seed, cli.out),
        Command::Compare => commands::compare(config, cli.seed, cli.out),
        Command::Mpc => commands::mpc(config, cli.seed, cli.out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(3)
        }
        Err(CliError::Infeasible { step }) => {
            eprintln!("closed loop infeasible at step {step}");
            ExitCode::from(4)
        }
    }
}
