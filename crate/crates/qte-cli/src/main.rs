//! `qte`: counterfactual outcome distributions and quantile treatment
//! effects from observational data, plus the seeded benchmark designs
//! used to validate the estimator.
//!
//! Exit codes: 0 success, 1 usage, 2 validation, 3 runtime failure,
//! 4 partial results (some replicates failed, aggregates written from
//! the rest).

mod commands;
mod config;
mod errors;
mod reference;

use clap::Parser;

#[derive(Parser)]
#[command(
    name = "qte",
    version,
    about = "Bayesian quantile treatment effects via double balancing scores",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Subcommand)]
enum Command {
    /// Generate seeded benchmark datasets and their ground truth
    Simulate(commands::simulate::SimulateArgs),
    /// Estimate counterfactual distributions and quantile effects for one dataset
    Fit(commands::fit::FitArgs),
    /// Run a seeded simulate-fit study and aggregate the errors
    Replicate(commands::replicate::ReplicateArgs),
    /// Re-aggregate a metrics table and compare against bundled references
    Report(commands::report::ReportArgs),
}

fn main() -> std::process::ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => errors::EXIT_USAGE,
            };
            let _ = e.print();
            return std::process::ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Simulate(args) => commands::simulate::run(args),
        Command::Fit(args) => commands::fit::run(args),
        Command::Replicate(args) => commands::replicate::run(args),
        Command::Report(args) => commands::report::run(args),
    };
    match result {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            std::process::ExitCode::from(e.code())
        }
    }
}
