//! Scenario-driven front end for `wviab`: config parsing, command dispatch
//! and the oracle check suite behind `verify`.

pub mod checks;
pub mod commands;
pub mod scenario;
pub mod seeds;

pub use commands::{dispatch, CliError, Command};
pub use scenario::{parse_file, parse_str, ConfigError, Scenario};
