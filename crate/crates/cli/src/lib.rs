//! Configuration, subcommands and file formats of the `rank-sde` tool.

pub mod config;
pub mod error;
pub mod output;
pub mod run;

pub use config::{parse_config, parse_config_with, RunConfig};
pub use error::{CliError, CliResult};
pub use run::{run, Command};
