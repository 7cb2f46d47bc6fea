//! Experiment orchestration and the `seg` command line on top of `seg-core`.

pub mod cli;
pub mod config;
pub mod experiment;
pub mod output;
