//! Experiment harness around `mmr-core`: configuration files, the solve,
//! sample, compare and oracle pipelines, and their result files.

pub mod config;
pub mod experiment;
pub mod output;
