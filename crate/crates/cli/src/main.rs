//! `rationale` — train small span-prediction QA models, attribute their
//! answers to passage words with integrated gradients, and extract
//! greedy decision-flip rationales.
//!
//! Subcommands compose through plain files: `generate` writes a dataset
//! and annotations, `train` a checkpoint and holdout split, `extract`
//! rationale/attribution dumps, `evaluate` and `report` tables and
//! summaries. Every command writes a manifest with its resolved
//! settings and input hashes; identical seeds give byte-identical
//! outputs.
//!
//! Exit codes: 0 success, 2 usage, 3 input, 4 numerical failure.

mod args;
mod commands;
mod config;
mod errors;
mod manifest;
mod records;

use clap::Parser;

use crate::args::{Cli, Command};

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => commands::generate::run(a),
        Command::Train(a) => commands::train::run(a),
        Command::Extract(a) => commands::extract::run(a),
        Command::Evaluate(a) => commands::evaluate::run(a),
        Command::Report(a) => commands::report::run(a),
    };
    if let Err(err) = result {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
