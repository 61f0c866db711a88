//! Command implementations behind the `topoprior` binary.

pub mod ablate;
pub mod commands;
pub mod config;
pub mod error;
pub mod prepare;
pub mod svg;

pub use config::RunConfig;
pub use error::CliError;
