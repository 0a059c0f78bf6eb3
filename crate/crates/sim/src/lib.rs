//! Experiment harness: configuration, closed-loop simulation, metrics and logs.

pub mod config;
pub mod error;
pub mod experiment;
pub mod files;
pub mod io;
pub mod metrics;
pub mod sim;
pub mod variant;
