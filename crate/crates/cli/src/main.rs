//! `triqa` — train and evaluate the three-branch full-reference IQA model.
//!
//! Machine-readable results go to stdout; diagnostics and progress to
//! stderr (`RUST_LOG` controls verbosity).

mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "triqa", version, about = "Three-branch full-reference image quality assessment")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic-distortion benchmark (images + manifest.csv)
    Synth(commands::SynthArgs),
    /// Train a model from an experiment config
    Train(commands::TrainArgs),
    /// Evaluate a checkpoint against a manifest
    Eval(commands::EvalArgs),
    /// Score one query image against one reference image
    Predict(commands::PredictArgs),
    /// Train and evaluate a family of model configurations
    Ablate(commands::AblateArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Synth(args) => commands::synth(args),
        Cmd::Train(args) => commands::train(args),
        Cmd::Eval(args) => commands::eval(args),
        Cmd::Predict(args) => commands::predict(args),
        Cmd::Ablate(args) => commands::ablate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
