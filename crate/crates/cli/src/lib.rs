//! Scenario-driven front end for `herald-core`: scenario parsing, overrides,
//! subcommand execution and artifact output.

pub mod commands;
pub mod error;
pub mod scenario;

pub use commands::{execute, Command, Invocation, Outcome};
pub use error::CliError;
pub use scenario::Scenario;
