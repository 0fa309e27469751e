//! File formats, checkpoints, reports and the command-line driver for
//! `bist-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod features;
pub mod report;
pub mod run;
pub mod synthesize;

pub use error::{Error, Result};
