//! Command-line driver: configuration, file outputs and the four subcommands.

pub mod commands;
pub mod config;
pub mod error;
pub mod standin;

pub use commands::{run, Cli, Command};
pub use config::{Method, RunConfig};
pub use error::CliError;
