//! Experiment harness behind the command-line binary: configuration,
//! covering study, quantizer bake-off, noise and codebook-size sweeps,
//! ablations, and the shared CSV conventions.

pub mod ablate;
pub mod bench;
pub mod config;
pub mod covering;
pub mod csvout;
pub mod kmeans;
pub mod noise;
pub mod runner;
pub mod sweep;
