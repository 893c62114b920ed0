//! JSON parameter checkpoints. Every float is written with enough digits to
//! read back bit-identically.

use std::fs;
use std::path::Path;

use cml_bgnn_core::{ModelConfig, ModelParams, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ConfigRecord {
    input_dim: usize,
    dim: usize,
    layers: usize,
    dropout: f64,
    leaky_slope: f64,
    no_history: bool,
    no_bayes: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Checkpoint {
    config: ConfigRecord,
    params: Vec<TensorRecord>,
}

pub fn to_json(params: &ModelParams) -> String {
    let c = params.config();
    let ckpt = Checkpoint {
        config: ConfigRecord {
            input_dim: c.input_dim,
            dim: c.dim,
            layers: c.layers,
            dropout: c.dropout,
            leaky_slope: c.leaky_slope,
            no_history: c.no_history,
            no_bayes: c.no_bayes,
        },
        params: params
            .named()
            .map(|(name, t)| TensorRecord {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                data: t.data().to_vec(),
            })
            .collect(),
    };
    serde_json::to_string(&ckpt).expect("checkpoint values are finite")
}

pub fn from_json(text: &str, path: &Path) -> Result<ModelParams> {
    let ckpt: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line() as u64,
        msg: e.to_string(),
    })?;
    let c = ckpt.config;
    let config = ModelConfig {
        input_dim: c.input_dim,
        dim: c.dim,
        layers: c.layers,
        dropout: c.dropout,
        leaky_slope: c.leaky_slope,
        no_history: c.no_history,
        no_bayes: c.no_bayes,
    };
    let named = ckpt
        .params
        .into_iter()
        .map(|r| Ok((r.name, Tensor::new(&r.shape, r.data)?)))
        .collect::<std::result::Result<Vec<_>, cml_bgnn_core::Error>>()?;
    Ok(ModelParams::from_named(config, named)?)
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    fs::write(path, to_json(params)).map_err(io_err(path))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    from_json(&text, path)
}
