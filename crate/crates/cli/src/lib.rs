//! Experiment driver: configuration, result files, charts and subcommands.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod presets;
pub mod svg;
