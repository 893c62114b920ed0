//! Plain `key = value` run configuration.
//!
//! Keys are the [`TrainConfig`] field names. `#` starts a comment. Unknown
//! keys and malformed values are rejected with their line number.

use std::fs;
use std::path::Path;

use cml_bgnn_core::episode::SemiStrategy;
use cml_bgnn_core::TrainConfig;

use crate::error::{io_err, Error, Result};

pub const KEYS: &[&str] = &[
    "iterations",
    "layers",
    "hidden_states",
    "dim",
    "batch_size",
    "lr",
    "weight_decay",
    "dropout",
    "gamma",
    "kl_weight",
    "leaky_slope",
    "train_samples",
    "eval_samples",
    "no_history",
    "no_bayes",
    "seed",
    "n_way",
    "k_shot",
    "n_query",
    "rho",
    "labeled_fraction",
    "strategy",
    "val_every",
    "val_episodes",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value.parse().map_err(|_| format!("bad value `{value}` for `{key}`"))
}

fn parse_strategy(value: &str) -> std::result::Result<SemiStrategy, String> {
    match value {
        "semi" => Ok(SemiStrategy::Semi),
        "labeled_only" => Ok(SemiStrategy::LabeledOnly),
        other => Err(format!("bad strategy `{other}`, expected `semi` or `labeled_only`")),
    }
}

fn strategy_name(s: SemiStrategy) -> &'static str {
    match s {
        SemiStrategy::Semi => "semi",
        SemiStrategy::LabeledOnly => "labeled_only",
    }
}

/// Sets one field by name.
pub fn apply(cfg: &mut TrainConfig, key: &str, value: &str) -> std::result::Result<(), String> {
    let v = value.trim();
    match key {
        "iterations" => cfg.iterations = parse(key, v)?,
        "layers" => cfg.layers = parse(key, v)?,
        "hidden_states" => cfg.hidden_states = parse(key, v)?,
        "dim" => cfg.dim = parse(key, v)?,
        "batch_size" => cfg.batch_size = parse(key, v)?,
        "lr" => cfg.lr = parse(key, v)?,
        "weight_decay" => cfg.weight_decay = parse(key, v)?,
        "dropout" => cfg.dropout = parse(key, v)?,
        "gamma" => cfg.gamma = parse(key, v)?,
        "kl_weight" => cfg.kl_weight = parse(key, v)?,
        "leaky_slope" => cfg.leaky_slope = parse(key, v)?,
        "train_samples" => cfg.train_samples = parse(key, v)?,
        "eval_samples" => cfg.eval_samples = parse(key, v)?,
        "no_history" => cfg.no_history = parse(key, v)?,
        "no_bayes" => cfg.no_bayes = parse(key, v)?,
        "seed" => cfg.seed = parse(key, v)?,
        "n_way" => cfg.n_way = parse(key, v)?,
        "k_shot" => cfg.k_shot = parse(key, v)?,
        "n_query" => cfg.n_query = parse(key, v)?,
        "rho" => cfg.rho = parse(key, v)?,
        "labeled_fraction" => cfg.labeled_fraction = parse(key, v)?,
        "strategy" => cfg.strategy = parse_strategy(v)?,
        "val_every" => cfg.val_every = parse(key, v)?,
        "val_episodes" => cfg.val_episodes = parse(key, v)?,
        other => return Err(format!("unknown key `{other}`")),
    }
    Ok(())
}

/// `(line, key, value)` triples in file order.
pub fn parse_pairs(text: &str, path: &Path) -> Result<Vec<(u64, String, String)>> {
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i as u64 + 1,
            msg,
        };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(format!("expected `key = value`, found `{line}`")))?;
        let key = key.trim();
        if !KEYS.contains(&key) {
            return Err(err(format!("unknown key `{key}`")));
        }
        pairs.push((i as u64 + 1, key.to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

/// Applies the pairs of a config text on top of `cfg`.
pub fn apply_text(cfg: &mut TrainConfig, text: &str, path: &Path) -> Result<Vec<String>> {
    let mut keys = Vec::new();
    for (line, key, value) in parse_pairs(text, path)? {
        apply(cfg, &key, &value).map_err(|msg| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        })?;
        keys.push(key);
    }
    Ok(keys)
}

/// Loads a config file over the defaults. Returns the config and the keys
/// the file set.
pub fn load_config(path: &Path) -> Result<(TrainConfig, Vec<String>)> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut cfg = TrainConfig::default();
    let keys = apply_text(&mut cfg, &text, path)?;
    Ok((cfg, keys))
}

/// Every key with its value; reading it back reproduces `cfg` exactly.
pub fn render(cfg: &TrainConfig) -> String {
    let values: Vec<String> = vec![
        cfg.iterations.to_string(),
        cfg.layers.to_string(),
        cfg.hidden_states.to_string(),
        cfg.dim.to_string(),
        cfg.batch_size.to_string(),
        cfg.lr.to_string(),
        cfg.weight_decay.to_string(),
        cfg.dropout.to_string(),
        cfg.gamma.to_string(),
        cfg.kl_weight.to_string(),
        cfg.leaky_slope.to_string(),
        cfg.train_samples.to_string(),
        cfg.eval_samples.to_string(),
        cfg.no_history.to_string(),
        cfg.no_bayes.to_string(),
        cfg.seed.to_string(),
        cfg.n_way.to_string(),
        cfg.k_shot.to_string(),
        cfg.n_query.to_string(),
        cfg.rho.to_string(),
        cfg.labeled_fraction.to_string(),
        strategy_name(cfg.strategy).to_string(),
        cfg.val_every.to_string(),
        cfg.val_episodes.to_string(),
    ];
    KEYS.iter()
        .zip(values)
        .map(|(k, v)| format!("{k} = {v}\n"))
        .collect()
}

pub fn check(cfg: &TrainConfig) -> Result<()> {
    cfg.validate().map_err(|e| Error::Config(e.to_string()))
}
