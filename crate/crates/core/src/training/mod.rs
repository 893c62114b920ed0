//! Losses, the Adam optimizer, evaluation and the meta-training loop.

mod adam;
mod config;
mod eval;
mod loss;
mod train;

pub use adam::{adam_step, OptState};
pub use config::TrainConfig;
pub use eval::{evaluate, EpisodePredictor, EvalReport, ModelPredictor, PrototypePredictor};
pub use loss::{
    bayes_loss, edge_log_likelihood, edge_loss, kl_standard_normal, sample_log_likelihoods, PROB_CLAMP,
};
pub use train::{
    batch_loss, batch_objective, check_gradients, full_model_gradient_check, init_params, meta_train, sample_batch, BatchLoss, MetricRecord,
    Objective, Split, TrainOutcome,
};

use crate::episode::Dataset;
use crate::error::Result;
use crate::model::ModelParams;
use crate::RngStream;

/// Held-out accuracy of `params` over `num_episodes` sequences drawn with
/// the episode settings of `cfg`.
pub fn evaluate_model(params: &ModelParams, ds: &Dataset, num_episodes: usize, cfg: &TrainConfig) -> Result<EvalReport> {
    let predictor = ModelPredictor {
        params,
        n_samples: cfg.eval_samples,
    };
    let rng = RngStream::new(cfg.seed).split(crate::diffcore::purpose::VALIDATION, 1);
    evaluate(&predictor, ds, num_episodes, &cfg.episode_config(), &rng)
}
