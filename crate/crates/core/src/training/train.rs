use alloc::vec::Vec;

use super::adam::{adam_step, OptState};
use super::eval::{evaluate, ModelPredictor};
use super::loss::{bayes_loss, edge_loss, sample_log_likelihoods};
use super::TrainConfig;
use crate::diffcore::{grad_check, purpose, GradCheckConfig, GradCheckReport, RngStream, Tape, Tensor, Var};
use crate::episode::{Dataset, EpisodeSequence};
use crate::error::{Error, Result};
use crate::model::{forward_sequence, fresh_history, BoundModel, ForwardOptions, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    pub iter: usize,
    pub split: Split,
    pub loss_e: Option<f64>,
    pub loss_b: Option<f64>,
    pub acc: Option<f64>,
    pub ci: Option<f64>,
}

/// Loss values and parameter gradients for one batch.
#[derive(Debug, Clone)]
pub struct BatchLoss {
    pub total: f64,
    pub edge: f64,
    pub bayes: f64,
    pub grads: Vec<Tensor>,
}

fn sum_vars(tape: &mut Tape, vars: &[Var]) -> Result<Var> {
    let mut acc = vars[0];
    for &v in &vars[1..] {
        acc = tape.add(acc, v)?;
    }
    Ok(acc)
}

/// Loss nodes of one batch on a tape.
#[derive(Debug, Clone)]
pub struct Objective {
    /// `mean over sequences and episodes of (L_E + γ·L_B)`.
    pub total: Var,
    pub edge: Vec<Var>,
    pub bayes: Vec<Var>,
}

/// Records the batch objective for an already-bound model.
///
/// With `no_bayes` the Bayes term is dropped entirely, so the posterior
/// heads receive exactly zero gradient.
pub fn batch_objective(
    tape: &mut Tape,
    bound: &BoundModel,
    params: &ModelParams,
    cfg: &TrainConfig,
    batch: &[EpisodeSequence],
    opts: &ForwardOptions,
    rng: &RngStream,
) -> Result<Objective> {
    let mut edge = Vec::new();
    let mut bayes = Vec::new();
    let mut totals = Vec::new();
    for (b, seq) in batch.iter().enumerate() {
        let h0 = fresh_history(tape, params, seq);
        let out = forward_sequence(tape, seq, bound, h0, opts, &rng.split(purpose::FORWARD, b as u64))?;
        for (graph, ep) in out.graphs.iter().zip(&out.episodes) {
            let le = edge_loss(tape, &ep.predictions, &graph.edge_targets, &graph.target_mask)?;
            edge.push(le);
            if opts.no_bayes {
                totals.push(le);
            } else {
                let ll = sample_log_likelihoods(tape, &ep.last_layer_samples, &graph.edge_targets, &graph.target_mask)?;
                let lb = bayes_loss(tape, &ep.posterior, &ll, cfg.kl_weight)?;
                bayes.push(lb);
                let weighted = tape.affine(lb, cfg.gamma, 0.0);
                totals.push(tape.add(le, weighted)?);
            }
        }
    }
    if totals.is_empty() {
        return Err(Error::Loss("empty batch".into()));
    }
    let total = sum_vars(tape, &totals)?;
    let total = tape.affine(total, 1.0 / totals.len() as f64, 0.0);
    Ok(Objective { total, edge, bayes })
}

/// Batch objective value, its parts, and the parameter gradients.
pub fn batch_loss(
    params: &ModelParams,
    cfg: &TrainConfig,
    batch: &[EpisodeSequence],
    opts: &ForwardOptions,
    rng: &RngStream,
) -> Result<BatchLoss> {
    let mut tape = Tape::new();
    let bound = BoundModel::bind(params, &mut tape);
    let obj = batch_objective(&mut tape, &bound, params, cfg, batch, opts, rng)?;
    let n = obj.edge.len() as f64;
    let mean = |tape: &Tape, v: &[Var]| v.iter().map(|x| tape.value(*x).data()[0]).sum::<f64>() / n;
    let edge = mean(&tape, &obj.edge);
    let bayes = mean(&tape, &obj.bayes);
    let total_value = tape.value(obj.total).data()[0];
    let grads = tape.backward(obj.total)?;
    let grads = bound
        .vars
        .iter()
        .zip(params.tensors())
        .map(|(v, p)| grads.get_or_zeros(*v, p.shape()))
        .collect();
    Ok(BatchLoss {
        total: total_value,
        edge,
        bayes,
        grads,
    })
}

/// Finite-difference check of the full batch objective with respect to
/// every parameter entry. Sampling is replayed from `rng` on every
/// evaluation, so the objective is a deterministic function of the weights.
pub fn check_gradients(
    params: &ModelParams,
    cfg: &TrainConfig,
    batch: &[EpisodeSequence],
    opts: &ForwardOptions,
    rng: &RngStream,
    check: GradCheckConfig,
) -> Result<GradCheckReport> {
    let f = |tape: &mut Tape, vars: &[Var]| -> Result<Var> {
        let bound = BoundModel::from_vars(params, vars.to_vec());
        Ok(batch_objective(tape, &bound, params, cfg, batch, opts, rng)?.total)
    };
    grad_check(f, params.tensors(), check)
}

/// Result of [`meta_train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best-validation parameters, or the final ones without validation.
    pub params: ModelParams,
    pub final_params: ModelParams,
    pub log: Vec<MetricRecord>,
    pub best_val: Option<f64>,
}

/// Sequences for iteration `iter`.
pub fn sample_batch(cfg: &TrainConfig, ds: &Dataset, iter: usize) -> Result<Vec<EpisodeSequence>> {
    let root = RngStream::new(cfg.seed).split(purpose::ITERATION, iter as u64);
    let ec = cfg.episode_config();
    (0..cfg.batch_size)
        .map(|b| ec.sample(ds, &mut root.split(purpose::SAMPLE, b as u64)))
        .collect()
}

/// Fresh parameters for `cfg` on features of width `input_dim`.
pub fn init_params(cfg: &TrainConfig, input_dim: usize) -> Result<ModelParams> {
    let mut rng = RngStream::new(cfg.seed).substream(purpose::INIT);
    ModelParams::init(cfg.model_config(input_dim), &mut rng)
}

/// Episodic meta-training with Adam. Deterministic given `cfg.seed`.
///
/// `val` enables periodic validation every `cfg.val_every` iterations and
/// best-checkpoint retention.
pub fn meta_train(cfg: &TrainConfig, train: &Dataset, val: Option<&Dataset>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut params = init_params(cfg, train.dim())?;
    let mut opt = OptState::new(params.tensors());
    let opts = params.config().forward_options(true, cfg.train_samples);
    let mut log = Vec::new();
    let mut best: Option<(f64, ModelParams)> = None;
    let val_rng = RngStream::new(cfg.seed).split(purpose::VALIDATION, 0);

    for iter in 0..cfg.iterations {
        let batch = sample_batch(cfg, train, iter)?;
        let rng = RngStream::new(cfg.seed).split(purpose::ITERATION, iter as u64);
        let loss = batch_loss(&params, cfg, &batch, &opts, &rng).map_err(|e| match e {
            Error::NonFinite(_) => Error::NanLoss(iter + 1),
            other => other,
        })?;
        if !loss.total.is_finite() {
            return Err(Error::NanLoss(iter + 1));
        }
        adam_step(params.tensors_mut(), &loss.grads, &mut opt, cfg.lr, cfg.weight_decay).map_err(|e| match e {
            Error::NonFiniteGradient(i) => {
                let idx: usize = i.trim_start_matches('#').parse().unwrap_or(0);
                Error::NonFiniteGradient(params.names()[idx].clone())
            }
            other => other,
        })?;
        log.push(MetricRecord {
            iter: iter + 1,
            split: Split::Train,
            loss_e: Some(loss.edge),
            loss_b: if cfg.no_bayes { None } else { Some(loss.bayes) },
            acc: None,
            ci: None,
        });
        if let Some(val_ds) = val {
            if cfg.val_every > 0 && (iter + 1) % cfg.val_every == 0 {
                let predictor = ModelPredictor {
                    params: &params,
                    n_samples: cfg.eval_samples,
                };
                let report = evaluate(&predictor, val_ds, cfg.val_episodes, &cfg.episode_config(), &val_rng)?;
                log.push(MetricRecord {
                    iter: iter + 1,
                    split: Split::Val,
                    loss_e: None,
                    loss_b: None,
                    acc: Some(report.accuracy),
                    ci: Some(report.ci95),
                });
                if best.as_ref().map_or(true, |(b, _)| report.accuracy > *b) {
                    best = Some((report.accuracy, params.clone()));
                }
            }
        }
    }
    let (best_val, chosen) = match best {
        Some((acc, p)) => (Some(acc), p),
        None => (None, params.clone()),
    };
    Ok(TrainOutcome {
        params: chosen,
        final_params: params,
        log,
        best_val,
    })
}

/// Gradient check of the whole model on a tiny seeded problem: 2-way
/// 1-shot, two queries, `T = 2`, dropout off, two posterior draws.
///
/// Weights are jittered away from initialization first, because the zero
/// initial biases put the self-pair activations exactly on the LeakyReLU
/// kink, where finite differences are meaningless.
pub fn full_model_gradient_check(dim: usize, layers: usize, seed: u64, check: GradCheckConfig) -> Result<GradCheckReport> {
    use rand_distr::{Distribution, StandardNormal};

    let root = RngStream::new(seed);
    let ds = crate::episode::make_synthetic_dataset(4, 4, 0.5, 6, &mut root.substream(purpose::DATA))?;
    let cfg = TrainConfig {
        layers,
        dim,
        hidden_states: 2,
        batch_size: 1,
        dropout: 0.0,
        n_way: 2,
        k_shot: 1,
        n_query: 2,
        rho: 0.5,
        seed,
        ..TrainConfig::default()
    };
    let mut params = init_params(&cfg, ds.dim())?;
    let mut jitter = root.substream(purpose::INIT).substream(1);
    for t in params.tensors_mut() {
        for v in t.data_mut() {
            let e: f64 = StandardNormal.sample(&mut jitter);
            *v += 0.1 * e;
        }
    }
    let batch = sample_batch(&cfg, &ds, 0)?;
    let opts = params.config().forward_options(true, 2);
    check_gradients(&params, &cfg, &batch, &opts, &root.split(purpose::ITERATION, 0), check)
}
