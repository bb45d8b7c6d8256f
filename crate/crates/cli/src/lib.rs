//! Experiment driver behind the `featx` binary.

pub mod commands;
pub mod config;
pub mod results;
