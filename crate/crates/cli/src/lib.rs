//! Experiment harness: TOML configs, prepared datasets, content-addressed run
//! directories with manifests, and the comparison report.

pub mod commands;
pub mod config;
pub mod error;
pub mod prepared;
pub mod report;
pub mod rundir;
