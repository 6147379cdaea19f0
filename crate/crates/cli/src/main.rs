//! `riskcast`: config-driven drawdown labeling, model training,
//! hyperparameter tuning, and strategy backtesting.
//!
//! Every subcommand takes one JSON config file and writes its outputs into
//! the configured output directory. Exit codes: 0 success, 1 runtime/data
//! error, 2 config/validation error. Diagnostics go to stderr; stdout
//! carries a single final JSON status line.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "riskcast", version, about = "Drawdown-aware trend prediction pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Detect drawdown episodes and write the label series.
    Label {
        /// Path to the run configuration (JSON).
        #[arg(long)]
        config: PathBuf,
    },
    /// Train a model and write its parameters and history.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Search hyperparameters under walk-forward validation.
    Tune {
        #[arg(long)]
        config: PathBuf,
    },
    /// Simulate the switching strategy and write the report.
    Backtest {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, config_path) = match &cli.command {
        Command::Label { config } => ("label", config),
        Command::Train { config } => ("train", config),
        Command::Tune { config } => ("tune", config),
        Command::Backtest { config } => ("backtest", config),
    };

    let outcome = commands::load_config(config_path).and_then(|config| match cli.command {
        Command::Label { .. } => commands::cmd_label(&config),
        Command::Train { .. } => commands::cmd_train(&config),
        Command::Tune { .. } => commands::cmd_tune(&config),
        Command::Backtest { .. } => commands::cmd_backtest(&config),
    });

    match outcome {
        Ok(outputs) => {
            println!("{}", commands::status_line(name, &outputs));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
