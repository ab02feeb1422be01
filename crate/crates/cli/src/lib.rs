//! Command-line front end: configuration, subcommands and CSV output.

pub mod commands;
pub mod config;
pub mod output;

pub use commands::{execute, run_command, Cli, Command, Outcome, RunArgs};
pub use config::{emit, parse_config, ConfigArgs, ConfigError, ExperimentConfig};
pub use output::{format_decimal, write_csv, Table};
