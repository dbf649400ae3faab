//! Command-line orchestration of the pclnet pipeline: configuration, stage
//! wiring and the built-in self-check.

pub mod config;
pub mod pipeline;
pub mod selfcheck;
