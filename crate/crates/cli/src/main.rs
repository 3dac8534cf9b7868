//! `pose-anchor` command-line front end.
//!
//! Every subcommand writes its artifacts plus a `run_config.json` echo of the
//! parsed command line into `--out`. Failures print
//! `{"error": <code>, "message": <text>}` to stderr and exit with status 1.

mod args;
mod commands;
mod output;

use std::process::ExitCode;

use clap::Parser;
use pose_anchor::par;

use args::{Cli, Command};

/// Caps the worker pool when set to a positive integer.
const THREADS_ENV: &str = "POSE_ANCHOR_THREADS";

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
    {
        par::init_threads(n);
    }
    let result = match &cli.command {
        Command::Synth(a) => commands::synth(&cli, a),
        Command::Reid(a) => commands::reid(&cli, a),
        Command::Refine(a) => commands::refine(&cli, a),
        Command::Sfm(a) => commands::sfm(&cli, a),
        Command::Estimate(a) => commands::estimate(&cli, a),
        Command::Plot(a) => commands::plot(&cli, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", output::error_json(&e));
            ExitCode::FAILURE
        }
    }
}
