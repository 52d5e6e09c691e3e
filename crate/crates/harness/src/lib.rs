//! Training, evaluation, benchmarking and persistence around
//! `condenser-core`, plus the `condenser` command-line tool.

pub mod bench;
pub mod checkpoint;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod experiments;
pub mod report;
pub mod specio;
pub mod train;

pub use error::{CheckpointError, HarnessError, Result};
