//! Command-line orchestration of the gap tail pipelines: configuration,
//! run directories, CSV and manifest artifacts.

pub mod artifacts;
pub mod config;
pub mod error;
pub mod stages;

pub use artifacts::{Manifest, RunDir, Table};
pub use config::{RunConfig, Stage};
pub use error::{CliError, Result};
pub use stages::Pipeline;
