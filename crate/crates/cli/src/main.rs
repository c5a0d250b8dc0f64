//! `cyclab`: run cyclic fine-tuning experiments, analyze them and plot the
//! results.

mod analyze;
mod config;
mod error;
mod manifest;
mod plot;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::CliResult;

#[derive(Parser)]
#[command(name = "cyclab", version, about = "Cyclic fine-tuning experiments and analytics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a transformer through the cyclic schedule.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated seeds; overrides `seeds`.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Run the linear toy model through the cyclic schedule.
    Toy {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Compute reports for a finished run directory.
    Analyze {
        run_dir: PathBuf,
        /// Comma-separated report names; defaults to the run's config.
        #[arg(long, value_delimiter = ',')]
        reports: Option<Vec<String>>,
    },
    /// Render report files as SVG charts.
    Plot {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[arg(long, default_value = "plots")]
        out: PathBuf,
    },
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Run { config, out, seeds } => {
            let dir = run::cmd_run(&config, out, seeds)?;
            println!("{}", dir.display());
        }
        Command::Toy { config, out, seeds } => {
            let dir = run::cmd_toy(&config, out, seeds)?;
            println!("{}", dir.display());
        }
        Command::Analyze { run_dir, reports } => {
            for dir in analyze::cmd_analyze(&run_dir, reports)? {
                println!("{}", dir.display());
            }
        }
        Command::Plot { files, out } => {
            for file in plot::cmd_plot(&files, &out)? {
                println!("{}", file.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
