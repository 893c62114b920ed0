use alloc::vec;
use alloc::vec::Vec;

use crate::diffcore::Tensor;
use crate::episode::Episode;
use crate::error::{Error, Result};

/// Index of the largest score; ties go to the lowest index.
fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Query class slots from edge predictions: each query picks the class whose
/// labeled support columns have the highest mean prediction.
pub fn predict_labels(predictions: &Tensor, ep: &Episode) -> Vec<usize> {
    let ns = ep.support.len();
    (0..ep.query.len())
        .map(|qi| {
            let i = ns + qi;
            let mut sum = vec![0.0; ep.n_way];
            let mut count = vec![0usize; ep.n_way];
            for (j, s) in ep.support.iter().enumerate() {
                if s.labeled {
                    sum[s.slot] += predictions.get2(i, j);
                    count[s.slot] += 1;
                }
            }
            let scores: Vec<f64> = sum
                .iter()
                .zip(&count)
                .map(|(s, &c)| if c == 0 { f64::NEG_INFINITY } else { s / c as f64 })
                .collect();
            argmax(&scores)
        })
        .collect()
}

/// Class-mean baseline scores `x·μ_c − ‖μ_c‖²/2` for every query.
pub fn prototype_scores(ep: &Episode) -> Result<Vec<Vec<f64>>> {
    let d = ep.dim();
    let mut means = vec![vec![0.0; d]; ep.n_way];
    let mut count = vec![0usize; ep.n_way];
    for s in ep.support.iter().filter(|s| s.labeled) {
        for (m, x) in means[s.slot].iter_mut().zip(&s.features) {
            *m += x;
        }
        count[s.slot] += 1;
    }
    for (c, (m, &n)) in means.iter_mut().zip(&count).enumerate() {
        if n == 0 {
            return Err(Error::Baseline(c));
        }
        m.iter_mut().for_each(|v| *v /= n as f64);
    }
    let norms: Vec<f64> = means.iter().map(|m| m.iter().map(|v| v * v).sum::<f64>()).collect();
    Ok(ep
        .query
        .iter()
        .map(|q| {
            means
                .iter()
                .zip(&norms)
                .map(|(m, n2)| q.features.iter().zip(m).map(|(a, b)| a * b).sum::<f64>() - n2 / 2.0)
                .collect()
        })
        .collect())
}

/// Prototype (class-mean) baseline predictions.
pub fn prototype_baseline(ep: &Episode) -> Result<Vec<usize>> {
    Ok(prototype_scores(ep)?.iter().map(|s| argmax(s)).collect())
}
