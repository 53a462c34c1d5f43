//! Command-line pipeline: configuration, analysis, sweeps and simulation.

pub mod config;
pub mod pipeline;
pub mod run;
