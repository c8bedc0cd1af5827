//! File formats, experiment runner and command line for `plab-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
mod error;
pub mod experiment;
pub mod report;

pub use error::{Error, Result};
