//! Command-line pipeline and annotation service over `genkb-core`.
//!
//! Each subcommand reads a [`config::RunConfig`] and writes fixed-format artifacts
//! into its output directory; [`service`] exposes active-learning sessions over HTTP.

pub mod commands;
pub mod config;
pub mod error;
pub mod files;
pub mod prompt;
pub mod service;

pub use config::RunConfig;
pub use error::CliError;
