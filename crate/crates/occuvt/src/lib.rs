//! File formats, configuration, synthetic scenes, benchmarking and the
//! command-line front end for `occuvt-core`.

pub mod bench;
pub mod cli;
pub mod config;
pub mod error;
pub mod formats;
pub mod report;
pub mod synth;
pub mod weights;

pub use error::{CliError, CliResult};
