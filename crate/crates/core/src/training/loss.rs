use alloc::vec::Vec;

use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::PosteriorParams;

/// Predictions are clamped into `[PROB_CLAMP, 1 − PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-7;

/// Sum of edge log-likelihoods over the entries selected by `valid`.
pub fn edge_log_likelihood(tape: &mut Tape, prediction: Var, targets: &Tensor, valid: &Tensor) -> Result<Var> {
    let p = tape.clamp(prediction, PROB_CLAMP, 1.0 - PROB_CLAMP);
    let log_p = tape.log(p)?;
    let q = tape.affine(p, -1.0, 1.0);
    let log_q = tape.log(q)?;
    let pos = targets.zip(valid, |y, m| y * m);
    let neg = targets.zip(valid, |y, m| (1.0 - y) * m);
    let a = tape.mul_const(log_p, pos)?;
    let b = tape.mul_const(log_q, neg)?;
    let s = tape.add(a, b)?;
    Ok(tape.sum_all(s))
}

/// Binary cross-entropy of query edges, averaged over valid entries and
/// over layers.
pub fn edge_loss(tape: &mut Tape, layers: &[Var], targets: &Tensor, valid: &Tensor) -> Result<Var> {
    let count = valid.sum();
    if count <= 0.0 {
        return Err(Error::Loss("no valid query edges".into()));
    }
    if layers.is_empty() {
        return Err(Error::Loss("no layer predictions".into()));
    }
    let mut total: Option<Var> = None;
    for &p in layers {
        let ll = edge_log_likelihood(tape, p, targets, valid)?;
        total = Some(match total {
            None => ll,
            Some(t) => tape.add(t, ll)?,
        });
    }
    let scale = -1.0 / (count * layers.len() as f64);
    Ok(tape.affine(total.expect("non-empty"), scale, 0.0))
}

/// `KL(N(μ, δ²) ‖ N(0, I)) = ½ Σ (μ² + δ² − ln δ² − 1)`.
pub fn kl_standard_normal(tape: &mut Tape, post: &PosteriorParams) -> Result<Var> {
    let mu2 = tape.mul(post.mu, post.mu)?;
    let log_s2 = tape.log(post.sigma2)?;
    let a = tape.add(mu2, post.sigma2)?;
    let b = tape.sub(a, log_s2)?;
    let terms = tape.affine(b, 0.5, -0.5);
    Ok(tape.sum_all(terms))
}

/// Negative Monte Carlo expected log-likelihood plus `kl_weight · KL`.
pub fn bayes_loss(tape: &mut Tape, post: &PosteriorParams, loglik_samples: &[Var], kl_weight: f64) -> Result<Var> {
    if loglik_samples.is_empty() {
        return Err(Error::Loss("bayes loss needs at least one sample".into()));
    }
    let mut total = loglik_samples[0];
    for &l in &loglik_samples[1..] {
        total = tape.add(total, l)?;
    }
    let nll = tape.affine(total, -1.0 / loglik_samples.len() as f64, 0.0);
    let kl = kl_standard_normal(tape, post)?;
    let kl = tape.affine(kl, kl_weight, 0.0);
    tape.add(nll, kl)
}

/// Log-likelihood of each posterior draw's prediction.
pub fn sample_log_likelihoods(
    tape: &mut Tape,
    samples: &[Var],
    targets: &Tensor,
    valid: &Tensor,
) -> Result<Vec<Var>> {
    samples
        .iter()
        .map(|&s| edge_log_likelihood(tape, s, targets, valid))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (Tensor, Tensor) {
        let targets = Tensor::new(&[2, 2], alloc::vec![1., 0., 0., 1.]).unwrap();
        let valid = Tensor::new(&[2, 2], alloc::vec![1., 1., 0., 0.]).unwrap();
        (targets, valid)
    }

    #[test]
    fn perfect_prediction_is_near_zero() {
        let (t, v) = setup();
        let mut tape = Tape::new();
        let p = tape.constant(t.clone());
        let l = edge_loss(&mut tape, &[p, p], &t, &v).unwrap();
        assert!(tape.value(l).data()[0] < 1e-5);
    }

    #[test]
    fn half_everywhere_is_ln2() {
        let (t, v) = setup();
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::full(&[2, 2], 0.5));
        let l = edge_loss(&mut tape, &[p], &t, &v).unwrap();
        assert!((tape.value(l).data()[0] - core::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn single_entry_gradient_matches_bce_derivative() {
        let (t, v) = setup();
        let mut tape = Tape::new();
        let vals = [0.3, 0.8, 0.6, 0.1];
        let p = tape.param(Tensor::new(&[2, 2], vals.to_vec()).unwrap());
        let l = edge_loss(&mut tape, &[p], &t, &v).unwrap();
        let g = tape.backward(l).unwrap();
        let g = g.get(p).unwrap();
        let count = 2.0;
        for (i, &pv) in vals.iter().enumerate() {
            let y = t.data()[i];
            let want = if v.data()[i] == 1.0 { (pv - y) / (pv * (1.0 - pv)) / count } else { 0.0 };
            assert!((g.data()[i] - want).abs() < 1e-12, "{i}: {} vs {want}", g.data()[i]);
        }
    }

    #[test]
    fn no_valid_entries_is_an_error() {
        let (t, _) = setup();
        let mut tape = Tape::new();
        let p = tape.constant(t.clone());
        assert!(matches!(edge_loss(&mut tape, &[p], &t, &Tensor::zeros(&[2, 2])), Err(Error::Loss(_))));
    }

    fn posterior(tape: &mut Tape, mu: f64, s2: f64) -> PosteriorParams {
        PosteriorParams {
            mu: tape.param(Tensor::scalar(mu)),
            sigma2: tape.param(Tensor::scalar(s2)),
        }
    }

    #[test]
    fn kl_closed_form() {
        let mut tape = Tape::new();
        let p = posterior(&mut tape, 0.0, 1.0);
        let kl = kl_standard_normal(&mut tape, &p).unwrap();
        assert_eq!(tape.value(kl).data()[0], 0.0);
        let p = posterior(&mut tape, 1.0, 1.0);
        let kl = kl_standard_normal(&mut tape, &p).unwrap();
        assert!((tape.value(kl).data()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn perfect_bayes_loss_vanishes() {
        let (t, v) = setup();
        let mut tape = Tape::new();
        let p = posterior(&mut tape, 0.0, 1.0);
        let pred = tape.constant(t.clone());
        let ll = sample_log_likelihoods(&mut tape, &[pred, pred], &t, &v).unwrap();
        let l = bayes_loss(&mut tape, &p, &ll, 1.0).unwrap();
        assert!(tape.value(l).data()[0].abs() < 1e-5);
    }
}
