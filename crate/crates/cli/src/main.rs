//! Experiment runner for the overgen library: analytic latency curves,
//! seeded Monte-Carlo sweeps, and annex-size optimization, all emitted as
//! CSV with deterministic row order.

mod args;
mod commands;

use clap::Parser;

fn main() {
    let cli = args::Cli::parse();
    let code = match commands::run(cli) {
        Ok(()) => 0,
        Err(args::CliError::Config(msg)) => {
            eprintln!("config error: {msg}");
            2
        }
        Err(args::CliError::Numeric(msg)) => {
            eprintln!("numerical failure: {msg}");
            3
        }
        Err(args::CliError::Other(msg)) => {
            eprintln!("error: {msg}");
            1
        }
    };
    std::process::exit(code);
}
