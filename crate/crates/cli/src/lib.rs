//! Configuration parsing, scenario dispatch, and serialization of
//! trajectories and reports for the hybrid-dynamics engine.

pub mod config;
pub mod runner;

pub use config::{apply_override, parse_config, serialize_config, ConfigError, RunConfig};
pub use runner::{execute, validate_report, CliError, RunArtifacts, OUT_DIR_ENV};
