//! Experiment orchestration: sweeps, baselines, reports, plots, throughput
//! and the `taskmask` command line.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod plot;
pub mod report;
pub mod sweep;
pub mod throughput;

pub use config::BenchConfig;
pub use error::{BenchError, Result};
pub use manifest::RunManifest;
pub use sweep::{Method, SweepReport, TradeoffPoint};
