use std::process::ExitCode;

use clap::Parser;
use nsdde_cli::{execute, Cli, ConfigError};
use nsdde_core::experiments::ExperimentError;
use nsdde_core::problem::ProblemError;

const EXIT_FAILURE: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_ASSERT: u8 = 3;

fn is_validation(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.is::<ConfigError>()
            || e.is::<ProblemError>()
            || e.is::<ExperimentError>()
            || e.is::<nsdde_core::brownian::GridError>()
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            println!("wrote {}", outcome.csv.display());
            println!("wrote {}", outcome.manifest.display());
            if cli.command.args().assert && !outcome.assert_passed {
                eprintln!("{}: acceptance thresholds not met", cli.command.name());
                return ExitCode::from(EXIT_ASSERT);
            }
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(if is_validation(&err) { EXIT_VALIDATION } else { EXIT_FAILURE })
        }
    }
}
