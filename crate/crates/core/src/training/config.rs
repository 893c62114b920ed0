use crate::episode::{EpisodeConfig, SemiStrategy};
use crate::error::{Error, Result};
use crate::model::ModelConfig;

/// Everything that governs a meta-training run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    /// Outer iterations `M`.
    pub iterations: usize,
    pub layers: usize,
    /// Episodes per sequence `T`, i.e. hidden-state steps.
    pub hidden_states: usize,
    pub dim: usize,
    /// Sequences per iteration.
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    /// Weight of the Bayes loss.
    pub gamma: f64,
    /// Weight of the KL term inside the Bayes loss.
    pub kl_weight: f64,
    pub leaky_slope: f64,
    pub train_samples: usize,
    pub eval_samples: usize,
    pub no_history: bool,
    pub no_bayes: bool,
    pub seed: u64,
    pub n_way: usize,
    pub k_shot: usize,
    pub n_query: usize,
    pub rho: f64,
    pub labeled_fraction: f64,
    pub strategy: SemiStrategy,
    /// Validation cadence in iterations; 0 disables validation.
    pub val_every: usize,
    pub val_episodes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            layers: 3,
            hidden_states: 8,
            dim: 96,
            batch_size: 8,
            lr: 1e-3,
            weight_decay: 1e-6,
            dropout: 0.3,
            gamma: 1.0,
            kl_weight: 1.0,
            leaky_slope: 0.01,
            train_samples: 1,
            eval_samples: 8,
            no_history: false,
            no_bayes: false,
            seed: 0,
            n_way: 5,
            k_shot: 1,
            n_query: 5,
            rho: 0.0,
            labeled_fraction: 1.0,
            strategy: SemiStrategy::Semi,
            val_every: 200,
            val_episodes: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("layers", self.layers),
            ("hidden_states", self.hidden_states),
            ("dim", self.dim),
            ("batch_size", self.batch_size),
            ("train_samples", self.train_samples),
            ("eval_samples", self.eval_samples),
            ("n_way", self.n_way),
            ("k_shot", self.k_shot),
            ("n_query", self.n_query),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(alloc::format!("{name} must be positive")));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(self.weight_decay >= 0.0 && self.gamma >= 0.0 && self.kl_weight >= 0.0) {
            return Err(Error::Config("weight decay, gamma and kl weight must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::Config("rho must lie in [0, 1]".into()));
        }
        if self.val_every > 0 && self.val_episodes < 2 {
            return Err(Error::Config("validation needs at least 2 episodes".into()));
        }
        self.model_config(1).validate()
    }

    pub fn model_config(&self, input_dim: usize) -> ModelConfig {
        ModelConfig {
            input_dim,
            dim: self.dim,
            layers: self.layers,
            dropout: self.dropout,
            leaky_slope: self.leaky_slope,
            no_history: self.no_history,
            no_bayes: self.no_bayes,
        }
    }

    pub fn episode_config(&self) -> EpisodeConfig {
        EpisodeConfig {
            n_way: self.n_way,
            k_shot: self.k_shot,
            n_query: self.n_query,
            sequence_len: self.hidden_states,
            rho: self.rho,
            labeled_fraction: self.labeled_fraction,
            strategy: self.strategy,
        }
    }
}
