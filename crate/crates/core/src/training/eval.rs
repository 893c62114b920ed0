use alloc::vec;
use alloc::vec::Vec;

use crate::diffcore::{purpose, RngStream, Tape};
use crate::episode::{Dataset, EpisodeConfig, EpisodeSequence};
use crate::error::{Error, Result};
use crate::model::{forward_sequence, fresh_history, predict_labels, prototype_baseline, BoundModel, ModelParams};

/// Anything that labels the queries of every episode in a sequence.
pub trait EpisodePredictor {
    fn predict_sequence(&self, seq: &EpisodeSequence, rng: &RngStream) -> Result<Vec<Vec<usize>>>;
}

/// The trained network, read out from its last layer.
#[derive(Debug, Clone, Copy)]
pub struct ModelPredictor<'a> {
    pub params: &'a ModelParams,
    pub n_samples: usize,
}

impl EpisodePredictor for ModelPredictor<'_> {
    fn predict_sequence(&self, seq: &EpisodeSequence, rng: &RngStream) -> Result<Vec<Vec<usize>>> {
        let mut tape = Tape::new();
        let bound = BoundModel::bind(self.params, &mut tape);
        let h0 = fresh_history(&mut tape, self.params, seq);
        let opts = self.params.config().forward_options(false, self.n_samples);
        let out = forward_sequence(&mut tape, seq, &bound, h0, &opts, rng)?;
        Ok(out
            .episodes
            .iter()
            .zip(&seq.episodes)
            .map(|(o, ep)| predict_labels(tape.value(o.last_prediction()), ep))
            .collect())
    }
}

/// Class-mean baseline applied to each episode on its own.
#[derive(Debug, Clone, Copy, Default)]
pub struct PrototypePredictor;

impl EpisodePredictor for PrototypePredictor {
    fn predict_sequence(&self, seq: &EpisodeSequence, _rng: &RngStream) -> Result<Vec<Vec<usize>>> {
        seq.episodes.iter().map(prototype_baseline).collect()
    }
}

/// Accuracy with a 95% normal-approximation confidence interval.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    /// `1.96 · s / √n` with the sample standard deviation `s`.
    pub ci95: f64,
    /// Accuracy on the final episode of each sequence.
    pub per_episode: Vec<f64>,
    pub episodes: usize,
    /// Mean accuracy at each position of the sequence.
    pub per_position: Vec<f64>,
}

impl EvalReport {
    pub fn from_accuracies(per_episode: Vec<f64>, per_position: Vec<f64>) -> Result<Self> {
        let n = per_episode.len();
        if n < 2 {
            return Err(Error::Config("evaluation needs at least 2 episodes".into()));
        }
        let mean = per_episode.iter().sum::<f64>() / n as f64;
        let var = per_episode.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (n - 1) as f64;
        Ok(Self {
            accuracy: mean,
            ci95: 1.96 * libm::sqrt(var) / libm::sqrt(n as f64),
            per_episode,
            episodes: n,
            per_position,
        })
    }
}

fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64
}

/// Scores `num_sequences` sampled sequences; the headline accuracy reads
/// only the last episode of each so history is always warm.
pub fn evaluate<P: EpisodePredictor + ?Sized>(
    predictor: &P,
    ds: &Dataset,
    num_sequences: usize,
    cfg: &EpisodeConfig,
    rng: &RngStream,
) -> Result<EvalReport> {
    if num_sequences < 2 {
        return Err(Error::Config("evaluation needs at least 2 episodes".into()));
    }
    let mut last = Vec::with_capacity(num_sequences);
    let mut per_position = vec![0.0; cfg.sequence_len];
    for i in 0..num_sequences {
        let mut sample_rng = rng.split(purpose::SAMPLE, i as u64);
        let seq = cfg.sample(ds, &mut sample_rng)?;
        let preds = predictor.predict_sequence(&seq, &rng.split(purpose::FORWARD, i as u64))?;
        if preds.len() != seq.len() {
            return Err(Error::Evaluation("predictor returned the wrong number of episodes".into()));
        }
        for (t, (p, ep)) in preds.iter().zip(&seq.episodes).enumerate() {
            let acc = accuracy(p, &ep.query_slots());
            per_position[t] += acc;
            if t + 1 == seq.len() {
                last.push(acc);
            }
        }
    }
    per_position.iter_mut().for_each(|a| *a /= num_sequences as f64);
    EvalReport::from_accuracies(last, per_position)
}
