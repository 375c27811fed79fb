//! Command-line surface: configuration, synthetic data and the
//! featurize/train/infer/evaluate/synth commands.

pub mod commands;
pub mod config;
pub mod synth;
