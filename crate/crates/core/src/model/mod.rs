//! The continual Bayesian graph network.
//!
//! A model is `layers` stacked blocks of node update, per-layer history
//! transition and edge update, followed by an amortized Gaussian posterior
//! over a scalar affine edge classifier `ψ = (W, b)`.

mod blocks;
mod forward;
mod params;
mod predict;

pub use blocks::{
    amortize_posterior, edge_inference, edge_update, history_transition, node_update, predict_edges,
    sample_classifiers, BlockOptions, EdgeBlock, EdgeUpdate, GruBlock, NodeBlock, NodeUpdate, PosteriorHeads,
    PosteriorParams, LAYER_NORM_EPS, VARIANCE_FLOOR,
};
pub use forward::{
    forward_episode, forward_sequence, fresh_history, BoundModel, EpisodeOutput, ForwardOptions, HistoryState,
    LayerTrace, SequenceOutput,
};
pub use params::{layout, ModelParams, DELTA_BIAS_INIT, EDGE_LINEARS, MU_BIAS_INIT};
pub use predict::{predict_labels, prototype_baseline, prototype_scores};

use crate::error::{Error, Result};

/// Architecture and ablation switches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    /// Width of the input node features.
    pub input_dim: usize,
    /// Node embedding and hidden-state width.
    pub dim: usize,
    pub layers: usize,
    pub dropout: f64,
    pub leaky_slope: f64,
    pub no_history: bool,
    pub no_bayes: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: 96,
            dim: 96,
            layers: 3,
            dropout: 0.3,
            leaky_slope: 0.01,
            no_history: false,
            no_bayes: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.dim == 0 || self.layers == 0 {
            return Err(Error::Config("input_dim, dim and layers must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(alloc::format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !self.leaky_slope.is_finite() {
            return Err(Error::Config("leaky slope must be finite".into()));
        }
        Ok(())
    }

    pub fn forward_options(&self, train: bool, n_samples: usize) -> ForwardOptions {
        ForwardOptions {
            train,
            n_samples,
            dropout: self.dropout,
            leaky_slope: self.leaky_slope,
            no_history: self.no_history,
            no_bayes: self.no_bayes,
        }
    }
}
