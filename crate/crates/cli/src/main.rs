//! `svyglm`: fit survey-weighted GLMs from CSV files and generate synthetic
//! survey samples.
//!
//! Exit status: 0 when the fit converged (or simulation succeeded), 2 when the
//! fit did not converge (the report is still written), 1 on any input, model
//! or usage error.

mod config;
mod fit;
mod report;
mod sim;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "svyglm", version, about = "Survey-weighted generalized linear models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a model and report coefficients, linearization SEs and Wald tests.
    Fit(fit::FitArgs),
    /// Write a synthetic stratified cluster sample as CSV.
    Simulate(sim::SimArgs),
}

pub const EXIT_OK: u8 = 0;
pub const EXIT_ERROR: u8 = 1;
pub const EXIT_NOT_CONVERGED: u8 = 2;

fn main() -> ExitCode {
    let args = match config::expand_config(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("svyglm: error: {e:#}");
            return ExitCode::from(EXIT_ERROR);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Fit(a) => fit::run(&a),
        Command::Simulate(a) => sim::run(&a).map(|()| EXIT_OK),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("svyglm: error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
