//! The `bgnn` command line.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on runtime errors.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use cml_bgnn_core::diffcore::{purpose, GradCheckConfig, RngStream, Tape};
use cml_bgnn_core::episode::make_synthetic_dataset;
use cml_bgnn_core::graph::EpisodeGraph;
use cml_bgnn_core::model::{forward_episode, BoundModel, HistoryState};
use cml_bgnn_core::training::{
    evaluate, full_model_gradient_check, meta_train, EvalReport, ModelPredictor, PrototypePredictor,
};
use cml_bgnn_core::{Dataset, ModelParams, TrainConfig};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::{self, render};
use crate::dataset::{load_dataset, save_dataset};
use crate::error::{io_err, Error, Result};
use crate::metrics::{export_plot, write_metrics};

pub const SEED_ENV: &str = "BGNN_SEED";

#[derive(Debug, Parser)]
#[command(name = "bgnn", version, about = "Continual meta-learning with Bayesian graph networks for few-shot classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic Gaussian-cluster dataset as CSV.
    GenData(GenDataArgs),
    /// Meta-train on a dataset CSV.
    Train(TrainArgs),
    /// Evaluate a checkpoint (or the prototype baseline) on a dataset CSV.
    Eval(EvalArgs),
    /// Finite-difference check of the full model gradient.
    Gradcheck(GradcheckArgs),
    /// Convert a metrics log into a tidy CSV of (iter, split, metric, value).
    ExportPlot(ExportPlotArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub classes: usize,
    #[arg(long)]
    pub dim: usize,
    #[arg(long)]
    pub spread: f64,
    #[arg(long)]
    pub per_class: usize,
    /// Falls back to $BGNN_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Overrides for any key of the config file. Flags win over the file.
#[derive(Debug, Args, Default)]
pub struct Overrides {
    #[arg(long, value_name = "N")]
    pub iterations: Option<String>,
    #[arg(long, value_name = "K")]
    pub layers: Option<String>,
    /// Episodes per sequence (T).
    #[arg(long, value_name = "T")]
    pub hidden_states: Option<String>,
    #[arg(long, value_name = "D")]
    pub dim: Option<String>,
    #[arg(long, value_name = "M")]
    pub batch_size: Option<String>,
    #[arg(long, value_name = "ETA")]
    pub lr: Option<String>,
    #[arg(long, value_name = "W")]
    pub weight_decay: Option<String>,
    #[arg(long, value_name = "P")]
    pub dropout: Option<String>,
    #[arg(long, value_name = "G")]
    pub gamma: Option<String>,
    #[arg(long, value_name = "W")]
    pub kl_weight: Option<String>,
    #[arg(long, value_name = "S")]
    pub leaky_slope: Option<String>,
    #[arg(long, value_name = "S")]
    pub train_samples: Option<String>,
    #[arg(long, value_name = "S")]
    pub eval_samples: Option<String>,
    #[arg(long, value_name = "BOOL")]
    pub no_history: Option<String>,
    #[arg(long, value_name = "BOOL")]
    pub no_bayes: Option<String>,
    /// Falls back to the config file, then $BGNN_SEED, then 0.
    #[arg(long, value_name = "SEED")]
    pub seed: Option<String>,
    #[arg(long, value_name = "N")]
    pub n_way: Option<String>,
    #[arg(long, value_name = "K")]
    pub k_shot: Option<String>,
    #[arg(long, value_name = "Q")]
    pub n_query: Option<String>,
    #[arg(long, value_name = "RHO")]
    pub rho: Option<String>,
    #[arg(long, value_name = "F")]
    pub labeled_fraction: Option<String>,
    /// `semi` or `labeled_only`.
    #[arg(long, value_name = "S")]
    pub strategy: Option<String>,
    #[arg(long, value_name = "N")]
    pub val_every: Option<String>,
    #[arg(long, value_name = "N")]
    pub val_episodes: Option<String>,
}

impl Overrides {
    fn pairs(&self) -> Vec<(&'static str, &str)> {
        let all: [(&'static str, &Option<String>); 24] = [
            ("iterations", &self.iterations),
            ("layers", &self.layers),
            ("hidden_states", &self.hidden_states),
            ("dim", &self.dim),
            ("batch_size", &self.batch_size),
            ("lr", &self.lr),
            ("weight_decay", &self.weight_decay),
            ("dropout", &self.dropout),
            ("gamma", &self.gamma),
            ("kl_weight", &self.kl_weight),
            ("leaky_slope", &self.leaky_slope),
            ("train_samples", &self.train_samples),
            ("eval_samples", &self.eval_samples),
            ("no_history", &self.no_history),
            ("no_bayes", &self.no_bayes),
            ("seed", &self.seed),
            ("n_way", &self.n_way),
            ("k_shot", &self.k_shot),
            ("n_query", &self.n_query),
            ("rho", &self.rho),
            ("labeled_fraction", &self.labeled_fraction),
            ("strategy", &self.strategy),
            ("val_every", &self.val_every),
            ("val_episodes", &self.val_episodes),
        ];
        all.into_iter().filter_map(|(k, v)| v.as_deref().map(|v| (k, v))).collect()
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training dataset CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Validation dataset CSV; enables periodic validation and best-checkpoint retention.
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// key = value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for metrics.jsonl, checkpoint.json and config.txt.
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
    /// Also write the per-layer adjacency of one training episode as CSV.
    #[arg(long)]
    pub dump_adjacency: bool,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint written by `train`. Required unless --baseline is given.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Score the prototype baseline instead of a checkpoint.
    #[arg(long)]
    pub baseline: bool,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of evaluation sequences.
    #[arg(long, default_value_t = 1000)]
    pub episodes: usize,
    /// Directory for per-layer adjacency CSVs of the first evaluation episode.
    #[arg(long)]
    pub dump_adjacency: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct ExportPlotArgs {
    /// metrics.jsonl written by `train`.
    #[arg(long)]
    pub metrics: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{SEED_ENV}=`{v}` is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

/// Defaults, then the config file, then `$BGNN_SEED` if no seed was set
/// yet, then the flags.
pub fn resolve_config(file: Option<&Path>, overrides: &Overrides) -> Result<TrainConfig> {
    let (mut cfg, keys) = match file {
        Some(path) => config::load_config(path)?,
        None => (TrainConfig::default(), Vec::new()),
    };
    if !keys.iter().any(|k| k == "seed") {
        if let Some(seed) = env_seed()? {
            cfg.seed = seed;
        }
    }
    for (key, value) in overrides.pairs() {
        config::apply(&mut cfg, key, value).map_err(|msg| Error::Config(format!("--{}: {msg}", key.replace('_', "-"))))?;
    }
    config::check(&cfg)?;
    Ok(cfg)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

fn adjacency_csv(t: &cml_bgnn_core::Tensor) -> String {
    let mut out = String::new();
    for i in 0..t.rows() {
        let row: Vec<String> = t.row(i).iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Writes `layer{k}.csv` (the adjacency leaving layer `k`) and `init.csv`
/// for the first episode of a sequence drawn from `ds`.
fn dump_adjacency(params: &ModelParams, ds: &Dataset, cfg: &TrainConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let rng = RngStream::new(cfg.seed).split(purpose::VALIDATION, 2);
    let seq = cfg.episode_config().sample(ds, &mut rng.split(purpose::SAMPLE, 0))?;
    let graph = EpisodeGraph::build(&seq.episodes[0])?;
    let mut tape = Tape::new();
    let bound = BoundModel::bind(params, &mut tape);
    let c = params.config();
    let mut history = HistoryState::zeros(&mut tape, c.layers, graph.num_nodes(), c.dim);
    let opts = c.forward_options(false, cfg.eval_samples);
    let out = forward_episode(&mut tape, &graph, &bound, &mut history, &opts, &rng.split(purpose::FORWARD, 0))?;
    write_file(&dir.join("init.csv"), &adjacency_csv(&graph.adjacency))?;
    for (k, layer) in out.layers.iter().enumerate() {
        write_file(&dir.join(format!("layer{}.csv", k + 1)), &adjacency_csv(tape.value(layer.adjacency_out)))?;
    }
    Ok(())
}

fn report_line(label: &str, r: &EvalReport) -> String {
    let pos: Vec<String> = r.per_position.iter().map(|a| format!("{a:.4}")).collect();
    format!(
        "{label} accuracy {:.4} ci95 {:.4} episodes {} per_position {}",
        r.accuracy,
        r.ci95,
        r.episodes,
        pos.join(",")
    )
}

fn gen_data(args: &GenDataArgs, out: &mut dyn Write) -> Result<()> {
    let seed = match args.seed {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    };
    let mut rng = RngStream::new(seed).substream(purpose::DATA);
    let ds = make_synthetic_dataset(args.classes, args.dim, args.spread, args.per_class, &mut rng)?;
    save_dataset(&ds, &args.out)?;
    let _ = writeln!(out, "wrote {} items of dimension {} to {}", ds.len(), ds.dim(), args.out.display());
    Ok(())
}

fn train(args: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = resolve_config(args.config.as_deref(), &args.overrides)?;
    let train_ds = load_dataset(&args.data)?;
    let val_ds = args.val.as_deref().map(load_dataset).transpose()?;
    fs::create_dir_all(&args.out).map_err(io_err(&args.out))?;
    write_file(&args.out.join("config.txt"), &render(&cfg))?;
    let outcome = meta_train(&cfg, &train_ds, val_ds.as_ref())?;
    write_metrics(&outcome.log, &args.out.join("metrics.jsonl"))?;
    save_checkpoint(&outcome.params, &args.out.join("checkpoint.json"))?;
    if args.dump_adjacency {
        dump_adjacency(&outcome.params, &train_ds, &cfg, &args.out.join("adjacency"))?;
    }
    let last = outcome.log.iter().rev().find(|r| r.loss_e.is_some());
    let _ = writeln!(
        out,
        "trained {} iterations; final loss_E {}; best val {}; outputs in {}",
        cfg.iterations,
        last.and_then(|r| r.loss_e).map_or("-".into(), |v| format!("{v:.4}")),
        outcome.best_val.map_or("-".into(), |v| format!("{v:.4}")),
        args.out.display()
    );
    Ok(())
}

fn eval(args: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = resolve_config(args.config.as_deref(), &args.overrides)?;
    let ds = load_dataset(&args.data)?;
    let rng = RngStream::new(cfg.seed).split(purpose::VALIDATION, 1);
    let ec = cfg.episode_config();
    if args.baseline {
        let report = evaluate(&PrototypePredictor, &ds, args.episodes, &ec, &rng)?;
        let _ = writeln!(out, "{}", report_line("baseline", &report));
        return Ok(());
    }
    let path = args
        .checkpoint
        .as_deref()
        .ok_or_else(|| Error::Config("eval needs --checkpoint or --baseline".into()))?;
    let params = load_checkpoint(path)?;
    if params.config().input_dim != ds.dim() {
        return Err(Error::Config(format!(
            "checkpoint expects {} features, dataset has {}",
            params.config().input_dim,
            ds.dim()
        )));
    }
    let predictor = ModelPredictor {
        params: &params,
        n_samples: cfg.eval_samples,
    };
    let report = evaluate(&predictor, &ds, args.episodes, &ec, &rng)?;
    let _ = writeln!(out, "{}", report_line("model", &report));
    if let Some(dir) = &args.dump_adjacency {
        dump_adjacency(&params, &ds, &cfg, dir)?;
    }
    Ok(())
}

fn gradcheck(args: &GradcheckArgs, out: &mut dyn Write) -> Result<bool> {
    let seed = match args.seed {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    };
    let check = GradCheckConfig {
        tol: args.tol,
        ..GradCheckConfig::default()
    };
    let report = full_model_gradient_check(args.dim, args.layers, seed, check)?;
    let _ = writeln!(
        out,
        "max relative error {:.3e} over {} entries: {}",
        report.max_rel_error,
        report.entries_checked,
        if report.passed { "PASS" } else { "FAIL" }
    );
    Ok(report.passed)
}

/// Parses `argv` (program name first) and runs the command. Output goes to
/// `out`, diagnostics to `err`.
pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    0
                }
                _ => {
                    let _ = write!(err, "{}", e.render());
                    1
                }
            };
        }
    };
    let result = match &cli.command {
        Command::GenData(a) => gen_data(a, out).map(|_| true),
        Command::Train(a) => train(a, out).map(|_| true),
        Command::Eval(a) => eval(a, out).map(|_| true),
        Command::Gradcheck(a) => gradcheck(a, out),
        Command::ExportPlot(a) => export_plot(&a.metrics, &a.out).map(|n| {
            let _ = writeln!(out, "exported {n} records to {}", a.out.display());
            true
        }),
    };
    match result {
        Ok(true) => 0,
        Ok(false) => 2,
        Err(Error::Config(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            1
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            2
        }
    }
}

pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with(argv, &mut std::io::stdout(), &mut std::io::stderr())
}
