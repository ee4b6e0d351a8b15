//! Configuration parsing and subcommand orchestration for the `contact-wkam` binary.

pub mod config;
pub mod run;

pub use config::{parse_config, parse_config_str, ConfigError, RunConfig};
pub use run::{run, Command, RunError};
