//! Command-line front end for `sparseproj`: data ingestion, run
//! configuration, reports and artifact files.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod report;

pub use commands::{run, Outcome};
pub use config::{Command, RunConfig};
pub use error::{CliError, Failure};
pub use report::RunReport;
