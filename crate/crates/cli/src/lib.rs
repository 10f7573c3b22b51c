//! Pipeline commands behind the `xgen` binary.
//!
//! - [`config`]: the sectioned pipeline configuration and its hash.
//! - [`commands`]: dataset building, training, inference and evaluation.

pub mod commands;
pub mod config;

pub use commands::Outcome;
pub use config::PipelineConfig;
