//! Continual meta-learning with Bayesian graph networks for few-shot
//! classification.
//!
//! The crate is `no_std` (it needs `alloc`). It carries the differentiable
//! tensor engine, episode sampling, episode-graph construction, the network
//! itself and the meta-training loop. File formats and the command line live
//! in the `cml-bgnn` companion crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

mod error;
pub use error::{Error, Result};

pub mod diffcore;
pub mod episode;
pub mod graph;
pub mod model;
pub mod training;

pub use diffcore::{RngStream, Tape, Tensor, Var};
pub use episode::{Dataset, Episode, EpisodeSequence};
pub use model::{ModelConfig, ModelParams};
pub use training::TrainConfig;
