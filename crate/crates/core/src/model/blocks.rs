//! The four per-episode building blocks: node update, history transition,
//! edge update, and Bayesian edge inference.

use alloc::vec::Vec;

use super::params::EDGE_LINEARS;
use crate::diffcore::{dropout, gaussian_sample, RngStream, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::{normalize_adjacency, NormalizedAdjacency};

/// Floor added to the softplus variance.
pub const VARIANCE_FLOOR: f64 = 1e-6;
/// Layer-norm epsilon inside the edge network.
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
pub struct NodeBlock {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct GruBlock {
    pub wz: Var,
    pub uz: Var,
    pub bz: Var,
    pub wr: Var,
    pub ur: Var,
    pub br: Var,
    pub wh: Var,
    pub uh: Var,
    pub bh: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct EdgeBlock {
    pub weights: [Var; EDGE_LINEARS],
    pub biases: [Var; EDGE_LINEARS],
}

#[derive(Debug, Clone, Copy)]
pub struct PosteriorHeads {
    pub mu_w: Var,
    pub mu_b: Var,
    pub delta_w: Var,
    pub delta_b: Var,
}

/// Runtime switches shared by the stochastic blocks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockOptions {
    pub train: bool,
    pub dropout: f64,
    pub leaky_slope: f64,
}

/// Output of [`node_update`].
#[derive(Debug, Clone, Copy)]
pub struct NodeUpdate {
    /// `A · V`, the neighbor aggregate of every node.
    pub aggregated: Var,
    pub output: Var,
}

/// `f_n([V ; A·V])` with `f_n` = linear → LeakyReLU → linear → dropout.
pub fn node_update(
    tape: &mut Tape,
    nodes: Var,
    adjacency: Var,
    block: &NodeBlock,
    opts: &BlockOptions,
    rng: &mut RngStream,
) -> Result<NodeUpdate> {
    let aggregated = tape.matmul(adjacency, nodes)?;
    let joined = tape.concat_cols(nodes, aggregated)?;
    let h = tape.linear(joined, block.w1, block.b1)?;
    let h = tape.leaky_relu(h, opts.leaky_slope);
    let h = tape.linear(h, block.w2, block.b2)?;
    let output = dropout(tape, h, opts.dropout, opts.train, rng)?;
    Ok(NodeUpdate { aggregated, output })
}

/// Gated history update, row by row:
///
/// ```text
/// z  = σ(v Wz + h Uz + bz)
/// r  = σ(v Wr + h Ur + br)
/// h̃  = tanh(v Wh + (r ⊙ h) Uh + bh)
/// h' = h̃ ⊙ z + h ⊙ (1 − z)
/// ```
pub fn history_transition(tape: &mut Tape, nodes: Var, prev: Var, gru: &GruBlock) -> Result<Var> {
    if tape.shape(nodes) != tape.shape(prev) {
        return Err(Error::Structure(alloc::format!(
            "history slots {:?} do not match node matrix {:?}",
            tape.shape(prev),
            tape.shape(nodes)
        )));
    }
    let gate = |tape: &mut Tape, w: Var, u: Var, b: Var, h: Var| -> Result<Var> {
        let a = tape.linear(nodes, w, b)?;
        let hu = tape.matmul(h, u)?;
        tape.add(a, hu)
    };
    let z_pre = gate(tape, gru.wz, gru.uz, gru.bz, prev)?;
    let z = tape.sigmoid(z_pre);
    let r_pre = gate(tape, gru.wr, gru.ur, gru.br, prev)?;
    let r = tape.sigmoid(r_pre);
    let reset = tape.mul(r, prev)?;
    let cand_pre = gate(tape, gru.wh, gru.uh, gru.bh, reset)?;
    let candidate = tape.tanh(cand_pre);
    let take = tape.mul(candidate, z)?;
    let keep_gate = tape.affine(z, -1.0, 1.0);
    let keep = tape.mul(prev, keep_gate)?;
    tape.add(take, keep)
}

/// Output of [`edge_update`].
#[derive(Debug, Clone, Copy)]
pub struct EdgeUpdate {
    /// `f_e(|h_i − h_j|)` before symmetrization, `[V, V]`.
    pub raw: Var,
    /// `(Ã + Ãᵀ) / 2`.
    pub symmetric: Var,
    pub normalized: NormalizedAdjacency,
}

/// Pairwise edge scores from node states.
///
/// Each pair feature `|h_i − h_j|` passes three linear → layer-norm →
/// LeakyReLU blocks, dropout, and a final linear → sigmoid.
pub fn edge_update(
    tape: &mut Tape,
    hidden: Var,
    block: &EdgeBlock,
    opts: &BlockOptions,
    rng: &mut RngStream,
) -> Result<EdgeUpdate> {
    let v = tape.shape(hidden)[0];
    let mut x = tape.pairwise_abs_diff(hidden)?;
    for l in 0..EDGE_LINEARS - 1 {
        x = tape.linear(x, block.weights[l], block.biases[l])?;
        x = tape.layer_norm(x, LAYER_NORM_EPS);
        x = tape.leaky_relu(x, opts.leaky_slope);
    }
    x = dropout(tape, x, opts.dropout, opts.train, rng)?;
    let last = EDGE_LINEARS - 1;
    x = tape.linear(x, block.weights[last], block.biases[last])?;
    let scores = tape.sigmoid(x);
    let raw = tape.reshape(scores, &[v, v])?;
    let raw_t = tape.transpose(raw)?;
    let sum = tape.add(raw, raw_t)?;
    let symmetric = tape.affine(sum, 0.5, 0.0);
    let normalized = normalize_adjacency(tape, symmetric)?;
    Ok(EdgeUpdate {
        raw,
        symmetric,
        normalized,
    })
}

/// Gaussian posterior over the task classifier `ψ = (W, b)`, both `[1, 2]`.
#[derive(Debug, Clone, Copy)]
pub struct PosteriorParams {
    pub mu: Var,
    pub sigma2: Var,
}

impl PosteriorParams {
    /// `N((1, 0), 0)`: the classifier is the identity map.
    pub fn degenerate(tape: &mut Tape) -> Self {
        let mu = tape.constant(Tensor::from_parts(alloc::vec![1, 2], alloc::vec![1.0, 0.0]));
        let sigma2 = tape.constant(Tensor::zeros(&[1, 2]));
        Self { mu, sigma2 }
    }
}

/// Mean-pools node states, then `μ = f_μ(pool)`, `δ² = softplus(f_δ(pool)) + 1e-6`.
pub fn amortize_posterior(tape: &mut Tape, hidden: Var, heads: &PosteriorHeads) -> Result<PosteriorParams> {
    let pooled = tape.mean_rows(hidden);
    let mu = tape.linear(pooled, heads.mu_w, heads.mu_b)?;
    let raw = tape.linear(pooled, heads.delta_w, heads.delta_b)?;
    let sp = tape.softplus(raw);
    let sigma2 = tape.affine(sp, 1.0, VARIANCE_FLOOR);
    Ok(PosteriorParams { mu, sigma2 })
}

/// Draws `n` classifiers `ψ ~ N(μ, δ²)` by reparameterization.
pub fn sample_classifiers(
    tape: &mut Tape,
    post: &PosteriorParams,
    rng: &mut RngStream,
    n: usize,
) -> Result<Vec<Var>> {
    if n == 0 {
        return Err(Error::Config("edge inference needs at least one sample".into()));
    }
    (0..n).map(|_| gaussian_sample(tape, post.mu, post.sigma2, rng)).collect()
}

/// Per-draw masked predictions `mask ⊙ σ(W A + b)` and their mean.
pub fn predict_edges(tape: &mut Tape, adjacency: Var, classifiers: &[Var], mask: &Tensor) -> Result<(Var, Vec<Var>)> {
    let mut per_sample = Vec::with_capacity(classifiers.len());
    for &psi in classifiers {
        let logits = tape.scalar_affine(adjacency, psi)?;
        let p = tape.sigmoid(logits);
        per_sample.push(tape.mul_const(p, mask.clone())?);
    }
    let mut total = per_sample[0];
    for &p in &per_sample[1..] {
        total = tape.add(total, p)?;
    }
    let mean = if per_sample.len() == 1 {
        total
    } else {
        tape.affine(total, 1.0 / per_sample.len() as f64, 0.0)
    };
    Ok((mean, per_sample))
}

/// `Mq ⊙ σ(W A + b) ⊙ Ms`, averaged over `n_samples` posterior draws.
pub fn edge_inference(
    tape: &mut Tape,
    adjacency: Var,
    post: &PosteriorParams,
    query_mask: &Tensor,
    support_mask: &Tensor,
    rng: &mut RngStream,
    n_samples: usize,
) -> Result<Var> {
    if query_mask.shape() != support_mask.shape() {
        return Err(crate::error::dim_err("edge_inference", query_mask.shape(), support_mask.shape()));
    }
    let mask = query_mask.zip(support_mask, |a, b| a * b);
    let psis = sample_classifiers(tape, post, rng, n_samples)?;
    Ok(predict_edges(tape, adjacency, &psis, &mask)?.0)
}
