//! Command-line front end for `mixtsql`: CSV ingestion, run configuration
//! and the subcommand runners that write JSON/CSV artifacts.

pub mod commands;
pub mod config;
pub mod error;
pub mod ingest;
pub mod output;

pub use commands::{run, Command};
pub use config::RunConfig;
pub use error::{CliError, CliResult};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
