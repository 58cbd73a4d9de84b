//! `qwork`: exact work statistics, phase-estimation sampling and Jarzynski
//! free-energy estimates for quench protocols.

mod commands;
mod config;
mod output;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{RunArgs, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "qwork", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Exact work distribution and partition-function summary.
    Exact(RunArgs),
    /// Rectangular binning vs. phase-estimation outcome tables, with an M sweep.
    Compare(RunArgs),
    /// Free-energy convergence from sampled work.
    Jarzynski(RunArgs),
    /// Draw K seeded work samples.
    Sample(RunArgs),
}

type Runner = fn(&RunConfig) -> anyhow::Result<Vec<std::path::PathBuf>>;

/// 2 for bad configuration or input, 1 for failed computations.
fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err
        .chain()
        .filter_map(|e| e.downcast_ref::<qwork_core::Error>())
        .any(|e| !e.is_input_error());
    if numerical {
        1
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (args, run): (&RunArgs, Runner) = match &cli.command {
        Command::Exact(a) => (a, commands::exact),
        Command::Compare(a) => (a, commands::compare),
        Command::Jarzynski(a) => (a, commands::jarzynski),
        Command::Sample(a) => (a, commands::sample_cmd),
    };
    let result = RunConfig::resolve(args).and_then(|config| run(&config));
    match result {
        Ok(paths) => {
            for p in paths {
                println!("wrote {}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
