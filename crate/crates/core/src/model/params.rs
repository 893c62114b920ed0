use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::ModelConfig;
use crate::diffcore::{Tape, Tensor, Var};
use crate::diffcore::RngStream;
use crate::error::{Error, Result};

/// Number of weight/bias pairs in the edge network.
pub const EDGE_LINEARS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct LayerSlots {
    pub node: [usize; 4],
    pub gru: [usize; 9],
    pub edge: [usize; 2 * EDGE_LINEARS],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct HeadSlots {
    pub mu_w: usize,
    pub mu_b: usize,
    pub delta_w: usize,
    pub delta_b: usize,
}

/// Every trainable tensor, in a fixed named order.
///
/// Names look like `layer0.node.w1`, `layer1.gru.uz`, `layer0.edge.b3`,
/// `posterior.mu.w`. The order is part of the checkpoint format.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Tensor>,
    pub(crate) layers: Vec<LayerSlots>,
    pub(crate) heads: HeadSlots,
}

const GRU_NAMES: [&str; 9] = ["wz", "uz", "bz", "wr", "ur", "br", "wh", "uh", "bh"];

/// Names and shapes of every parameter for `config`, in storage order.
pub fn layout(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let d = config.dim;
    let mut out = Vec::new();
    for k in 0..config.layers {
        let d_in = if k == 0 { config.input_dim } else { d };
        let p = format!("layer{k}");
        out.push((format!("{p}.node.w1"), alloc::vec![2 * d_in, d]));
        out.push((format!("{p}.node.b1"), alloc::vec![d]));
        out.push((format!("{p}.node.w2"), alloc::vec![d, d]));
        out.push((format!("{p}.node.b2"), alloc::vec![d]));
        for name in GRU_NAMES {
            let shape = if name.starts_with('b') { alloc::vec![d] } else { alloc::vec![d, d] };
            out.push((format!("{p}.gru.{name}"), shape));
        }
        for l in 0..EDGE_LINEARS {
            let o = if l + 1 == EDGE_LINEARS { 1 } else { d };
            out.push((format!("{p}.edge.w{}", l + 1), alloc::vec![d, o]));
            out.push((format!("{p}.edge.b{}", l + 1), alloc::vec![o]));
        }
    }
    out.push(("posterior.mu.w".into(), alloc::vec![d, 2]));
    out.push(("posterior.mu.b".into(), alloc::vec![2]));
    out.push(("posterior.delta.w".into(), alloc::vec![d, 2]));
    out.push(("posterior.delta.b".into(), alloc::vec![2]));
    out
}

/// Initial bias of the mean head: classifier weight 1, offset 0.
pub const MU_BIAS_INIT: [f64; 2] = [1.0, 0.0];
/// Initial raw variance bias; `softplus(-3) ≈ 0.049`.
pub const DELTA_BIAS_INIT: f64 = -3.0;

impl ModelParams {
    /// Glorot-uniform weights, zero biases, and posterior heads biased
    /// towards the identity classifier.
    pub fn init(config: ModelConfig, rng: &mut RngStream) -> Result<Self> {
        config.validate()?;
        let layout = layout(&config);
        let mut named = Vec::with_capacity(layout.len());
        for (name, shape) in layout {
            let t = if shape.len() == 2 {
                let bound = libm::sqrt(6.0 / (shape[0] + shape[1]) as f64);
                let n = shape[0] * shape[1];
                let data = (0..n).map(|_| (2.0 * rng.uniform() - 1.0) * bound).collect();
                Tensor::new(&shape, data)?
            } else if name == "posterior.mu.b" {
                Tensor::new(&shape, MU_BIAS_INIT.to_vec())?
            } else if name == "posterior.delta.b" {
                Tensor::full(&shape, DELTA_BIAS_INIT)
            } else {
                Tensor::zeros(&shape)
            };
            named.push((name, t));
        }
        Self::from_named(config, named)
    }

    /// Assembles parameters from `(name, tensor)` pairs, which must match
    /// [`layout`] exactly.
    pub fn from_named(config: ModelConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let expected = layout(&config);
        if expected.len() != named.len() {
            return Err(Error::Structure(format!(
                "expected {} parameter tensors, got {}",
                expected.len(),
                named.len()
            )));
        }
        for ((en, es), (n, t)) in expected.iter().zip(&named) {
            if en != n || es.as_slice() != t.shape() {
                return Err(Error::Structure(format!(
                    "parameter {n} {:?} does not match expected {en} {:?}",
                    t.shape(),
                    es
                )));
            }
        }
        let (names, tensors): (Vec<_>, Vec<_>) = named.into_iter().unzip();
        let find = |n: &str| names.iter().position(|x| x == n).expect("layout name");
        let mut layers = Vec::with_capacity(config.layers);
        for k in 0..config.layers {
            let p = format!("layer{k}");
            let node = [
                find(&format!("{p}.node.w1")),
                find(&format!("{p}.node.b1")),
                find(&format!("{p}.node.w2")),
                find(&format!("{p}.node.b2")),
            ];
            let mut gru = [0; 9];
            for (slot, name) in gru.iter_mut().zip(GRU_NAMES) {
                *slot = find(&format!("{p}.gru.{name}"));
            }
            let mut edge = [0; 2 * EDGE_LINEARS];
            for l in 0..EDGE_LINEARS {
                edge[2 * l] = find(&format!("{p}.edge.w{}", l + 1));
                edge[2 * l + 1] = find(&format!("{p}.edge.b{}", l + 1));
            }
            layers.push(LayerSlots { node, gru, edge });
        }
        let heads = HeadSlots {
            mu_w: find("posterior.mu.w"),
            mu_b: find("posterior.mu.b"),
            delta_w: find("posterior.delta.w"),
            delta_b: find("posterior.delta.b"),
        };
        Ok(Self {
            config,
            names,
            tensors,
            layers,
            heads,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(&mut self.tensors[i])
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|s| s.as_str()).zip(&self.tensors)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    /// Whether parameter `i` belongs to the amortized posterior heads.
    pub fn is_posterior(&self, i: usize) -> bool {
        self.names[i].starts_with("posterior.")
    }

    /// Records every tensor on `tape` as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.param(t.clone())).collect()
    }
}
