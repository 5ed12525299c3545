//! `tvnet`: train, evaluate, and inspect trend/variation wavelet models.
//!
//! Exit status: 0 success, 1 configuration error, 2 data error, 3 numerical
//! failure.

mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tvnet::ErrorClass;

use crate::config::{RunArgs, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "tvnet", version, about = "Trend/variation wavelet models for visit sequences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Cross-validate a model; writes per-fold checkpoints, epoch logs, and metrics.
    Train(RunArgs),
    /// Score a cohort with a checkpoint.
    Eval(RunArgs),
    /// Dump per-patient trend and variation for one feature.
    Decompose(RunArgs),
    /// Cross-validate every symlet order from 2 to 20.
    SweepSymlets(RunArgs),
    /// Dump difference attention weights for one feature.
    InspectAttention(RunArgs),
    /// Rank (class, feature) pairs by trend/variation correlation.
    Correlate(RunArgs),
    /// Write a synthetic cohort as CSV.
    Synth(RunArgs),
}

type Handler = fn(&RunConfig) -> tvnet::Result<String>;

fn run(command: &Command) -> tvnet::Result<String> {
    let (name, args, f): (&str, &RunArgs, Handler) = match command {
        Command::Train(a) => ("train", a, commands::train),
        Command::Eval(a) => ("eval", a, commands::eval),
        Command::Decompose(a) => ("decompose", a, commands::decompose),
        Command::SweepSymlets(a) => ("sweep-symlets", a, commands::sweep_symlets),
        Command::InspectAttention(a) => ("inspect-attention", a, commands::inspect_attention),
        Command::Correlate(a) => ("correlate", a, commands::correlate),
        Command::Synth(a) => ("synth", a, commands::synth),
    };
    let config = RunConfig::resolve(args)?;
    commands::prepare_output(&config, name)?;
    f(&config)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli.command) {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Config => 1,
                ErrorClass::Data => 2,
                ErrorClass::Numerical => 3,
            })
        }
    }
}
