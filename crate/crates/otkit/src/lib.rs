//! Command-line front end for `otkit-core`: CSV and JSON file formats, run
//! configurations, a rayon batch executor and the gradient-check harness.

pub mod commands;
pub mod config;
pub mod csvio;
pub mod error;
pub mod exec;
pub mod gradcheck;

pub use error::{CliError, CliResult};
