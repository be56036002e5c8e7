//! Experiment runner for projection-based class unlearning.

pub mod commands;
pub mod config;
pub mod pipeline;
pub mod svg;

pub use config::ExperimentConfig;
pub use pipeline::{reproduce_toy, Experiment, ToyReport};
