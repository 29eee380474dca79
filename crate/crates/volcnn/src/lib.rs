//! Experiment harness around `volcnn-core`: file formats, configuration,
//! the results store, the grid/ablation runner, reports and the CLI.

pub mod cli;
pub mod config;
mod error;
pub mod experiment;
pub mod format;
pub mod manifest;
pub mod pipeline;
pub mod report;
pub mod tables;

pub use config::Config;
pub use error::{Error, Result};
