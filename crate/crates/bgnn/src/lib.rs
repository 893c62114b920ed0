//! File formats, IO and the `bgnn` command line around `cml-bgnn-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
mod error;
pub mod metrics;

pub use error::{Error, Result};
