use alloc::vec::Vec;

use super::blocks::{
    amortize_posterior, edge_update, history_transition, node_update, predict_edges, sample_classifiers,
    BlockOptions, EdgeBlock, GruBlock, NodeBlock, PosteriorHeads, PosteriorParams,
};
use super::params::EDGE_LINEARS;
use super::ModelParams;
use crate::diffcore::{purpose, RngStream, Tape, Tensor, Var};
use crate::episode::{Episode, EpisodeSequence};
use crate::error::{Error, Result};
use crate::graph::{normalize_adjacency, EpisodeGraph};

/// Parameters recorded on a tape, grouped by block.
#[derive(Debug, Clone)]
pub struct BoundModel {
    pub vars: Vec<Var>,
    pub layers: Vec<(NodeBlock, GruBlock, EdgeBlock)>,
    pub heads: PosteriorHeads,
}

impl BoundModel {
    pub fn bind(params: &ModelParams, tape: &mut Tape) -> Self {
        let vars = params.bind(tape);
        Self::from_vars(params, vars)
    }

    /// Groups already-recorded parameter vars, in layout order.
    pub fn from_vars(params: &ModelParams, vars: Vec<Var>) -> Self {
        let layers = params
            .layers
            .iter()
            .map(|s| {
                let n = NodeBlock {
                    w1: vars[s.node[0]],
                    b1: vars[s.node[1]],
                    w2: vars[s.node[2]],
                    b2: vars[s.node[3]],
                };
                let g = s.gru.map(|i| vars[i]);
                let gru = GruBlock {
                    wz: g[0],
                    uz: g[1],
                    bz: g[2],
                    wr: g[3],
                    ur: g[4],
                    br: g[5],
                    wh: g[6],
                    uh: g[7],
                    bh: g[8],
                };
                let mut weights = [vars[0]; EDGE_LINEARS];
                let mut biases = [vars[0]; EDGE_LINEARS];
                for l in 0..EDGE_LINEARS {
                    weights[l] = vars[s.edge[2 * l]];
                    biases[l] = vars[s.edge[2 * l + 1]];
                }
                (n, gru, EdgeBlock { weights, biases })
            })
            .collect();
        let h = params.heads;
        let heads = PosteriorHeads {
            mu_w: vars[h.mu_w],
            mu_b: vars[h.mu_b],
            delta_w: vars[h.delta_w],
            delta_b: vars[h.delta_b],
        };
        Self { vars, layers, heads }
    }
}

/// Per-layer node hidden states carried across a sequence, indexed by node
/// slot.
#[derive(Debug, Clone)]
pub struct HistoryState {
    pub layers: Vec<Var>,
    pub step: usize,
}

impl HistoryState {
    pub fn zeros(tape: &mut Tape, layers: usize, slots: usize, dim: usize) -> Self {
        let layers = (0..layers).map(|_| tape.constant(Tensor::zeros(&[slots, dim]))).collect();
        Self { layers, step: 0 }
    }

    pub fn slots(&self, tape: &Tape) -> usize {
        self.layers.first().map_or(0, |v| tape.shape(*v)[0])
    }

    pub fn values(&self, tape: &Tape) -> Vec<Tensor> {
        self.layers.iter().map(|v| tape.value(*v).clone()).collect()
    }
}

/// Switches for one forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardOptions {
    pub train: bool,
    /// Posterior draws averaged in the prediction.
    pub n_samples: usize,
    pub dropout: f64,
    pub leaky_slope: f64,
    /// Replace the history transition by the identity on current features.
    pub no_history: bool,
    /// Use the degenerate posterior `N((1,0), 0)` instead of the amortized one.
    pub no_bayes: bool,
}

impl ForwardOptions {
    fn block(&self) -> BlockOptions {
        BlockOptions {
            train: self.train,
            dropout: self.dropout,
            leaky_slope: self.leaky_slope,
        }
    }
}

/// Intermediates of one layer.
#[derive(Debug, Clone, Copy)]
pub struct LayerTrace {
    /// Normalized adjacency fed to the node update.
    pub adjacency_in: Var,
    pub nodes_in: Var,
    pub aggregated: Var,
    pub node_out: Var,
    pub hidden: Var,
    pub edge_raw: Var,
    pub edge_symmetric: Var,
    pub adjacency_out: Var,
}

#[derive(Debug, Clone)]
pub struct EpisodeOutput {
    pub layers: Vec<LayerTrace>,
    pub posterior: PosteriorParams,
    pub classifiers: Vec<Var>,
    /// Mean masked prediction of every layer.
    pub predictions: Vec<Var>,
    /// Last-layer masked prediction of every posterior draw.
    pub last_layer_samples: Vec<Var>,
}

impl EpisodeOutput {
    pub fn last_prediction(&self) -> Var {
        *self.predictions.last().expect("at least one layer")
    }
}

/// Runs all layers over one episode graph and advances `history`.
///
/// Per layer: node update against the incoming adjacency, history
/// transition against that layer's hidden state, edge update producing the
/// next adjacency. The posterior is amortized from the last layer's states
/// and its draws are shared by every layer's prediction.
pub fn forward_episode(
    tape: &mut Tape,
    graph: &EpisodeGraph,
    model: &BoundModel,
    history: &mut HistoryState,
    opts: &ForwardOptions,
    rng: &RngStream,
) -> Result<EpisodeOutput> {
    let v = graph.num_nodes();
    if history.layers.len() != model.layers.len() {
        return Err(Error::Structure(alloc::format!(
            "history has {} layers, model has {}",
            history.layers.len(),
            model.layers.len()
        )));
    }
    if history.slots(tape) != v {
        return Err(Error::Structure(alloc::format!(
            "history has {} node slots, episode graph has {v} nodes",
            history.slots(tape)
        )));
    }
    let block = opts.block();
    let a0 = tape.constant(graph.adjacency.clone());
    let mut adjacency = normalize_adjacency(tape, a0)?.adjacency;
    let mut nodes = tape.constant(graph.nodes.clone());
    let mut traces = Vec::with_capacity(model.layers.len());

    for (k, (node_block, gru, edge_block)) in model.layers.iter().enumerate() {
        let mut node_rng = rng.split(purpose::DROPOUT, 2 * k as u64);
        let mut edge_rng = rng.split(purpose::DROPOUT, 2 * k as u64 + 1);
        let nu = node_update(tape, nodes, adjacency, node_block, &block, &mut node_rng)?;
        let hidden = if opts.no_history {
            nu.output
        } else {
            let h = history_transition(tape, nu.output, history.layers[k], gru)?;
            history.layers[k] = h;
            h
        };
        let eu = edge_update(tape, hidden, edge_block, &block, &mut edge_rng)?;
        traces.push(LayerTrace {
            adjacency_in: adjacency,
            nodes_in: nodes,
            aggregated: nu.aggregated,
            node_out: nu.output,
            hidden,
            edge_raw: eu.raw,
            edge_symmetric: eu.symmetric,
            adjacency_out: eu.normalized.adjacency,
        });
        adjacency = eu.normalized.adjacency;
        nodes = hidden;
    }
    history.step += 1;

    let last_hidden = traces.last().expect("at least one layer").hidden;
    let posterior = if opts.no_bayes {
        PosteriorParams::degenerate(tape)
    } else {
        amortize_posterior(tape, last_hidden, &model.heads)?
    };
    let mut post_rng = rng.split(purpose::POSTERIOR, 0);
    let classifiers = sample_classifiers(tape, &posterior, &mut post_rng, opts.n_samples)?;
    let mask = graph.prediction_mask();
    let mut predictions = Vec::with_capacity(traces.len());
    let mut last_layer_samples = Vec::new();
    for trace in &traces {
        let (mean, samples) = predict_edges(tape, trace.adjacency_out, &classifiers, &mask)?;
        predictions.push(mean);
        last_layer_samples = samples;
    }
    Ok(EpisodeOutput {
        layers: traces,
        posterior,
        classifiers,
        predictions,
        last_layer_samples,
    })
}

#[derive(Debug, Clone)]
pub struct SequenceOutput {
    pub graphs: Vec<EpisodeGraph>,
    pub episodes: Vec<EpisodeOutput>,
    pub history: HistoryState,
}

/// Runs a whole episode sequence, carrying hidden states from episode to
/// episode. Episode `t` uses the substream `rng.split(EPISODE, t)`.
pub fn forward_sequence(
    tape: &mut Tape,
    seq: &EpisodeSequence,
    model: &BoundModel,
    initial: HistoryState,
    opts: &ForwardOptions,
    rng: &RngStream,
) -> Result<SequenceOutput> {
    let mut history = initial;
    let mut graphs = Vec::with_capacity(seq.len());
    let mut episodes = Vec::with_capacity(seq.len());
    for (t, ep) in seq.episodes.iter().enumerate() {
        let graph = EpisodeGraph::build(ep)?;
        let ep_rng = rng.split(purpose::EPISODE, t as u64);
        let out = forward_episode(tape, &graph, model, &mut history, opts, &ep_rng)?;
        graphs.push(graph);
        episodes.push(out);
    }
    Ok(SequenceOutput {
        graphs,
        episodes,
        history,
    })
}

/// Convenience: zero history sized for the first episode of `seq`.
pub fn fresh_history(tape: &mut Tape, params: &ModelParams, seq: &EpisodeSequence) -> HistoryState {
    let slots = seq.episodes.first().map_or(0, Episode::num_nodes);
    HistoryState::zeros(tape, params.config().layers, slots, params.config().dim)
}
