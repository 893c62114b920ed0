//! Episode graphs: initial adjacency, degree normalization, masks and edge
//! targets.
//!
//! Nodes are the support items (in episode order) followed by the queries.

use alloc::vec::Vec;

use crate::diffcore::{Tape, Tensor, Var};
use crate::episode::Episode;
use crate::error::{Error, Result};

/// Added to every degree before the inverse square root.
pub const DEGREE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeGraph {
    /// `[V, d]` node features.
    pub nodes: Tensor,
    /// `[V, V]` initial adjacency.
    pub adjacency: Tensor,
    /// Row mask of query nodes.
    pub query_mask: Tensor,
    /// Column mask of labeled support nodes.
    pub support_mask: Tensor,
    pub edge_targets: Tensor,
    pub target_mask: Tensor,
}

impl EpisodeGraph {
    pub fn build(ep: &Episode) -> Result<Self> {
        let v = ep.num_nodes();
        let d = ep.dim();
        let mut feats = Vec::with_capacity(v * d);
        for i in 0..v {
            let f = ep.node_features(i);
            if f.len() != d {
                return Err(Error::Dimension {
                    op: "episode graph",
                    detail: alloc::format!("node {i} has {} features, expected {d}", f.len()),
                });
            }
            feats.extend_from_slice(f);
        }
        let (query_mask, support_mask) = build_masks(ep);
        let (edge_targets, target_mask) = edge_targets(ep);
        Ok(Self {
            nodes: Tensor::new(&[v, d], feats)?,
            adjacency: init_adjacency(ep),
            query_mask,
            support_mask,
            edge_targets,
            target_mask,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.rows()
    }

    /// `Mq ⊙ Ms`.
    pub fn prediction_mask(&self) -> Tensor {
        self.query_mask.zip(&self.support_mask, |a, b| a * b)
    }
}

/// 1 for labeled support pairs of the same class, 0 for labeled support
/// pairs of different classes, 0.5 for every pair touching a query or an
/// unlabeled support node. The diagonal is 1.
pub fn init_adjacency(ep: &Episode) -> Tensor {
    let v = ep.num_nodes();
    let mut a = Tensor::full(&[v, v], 0.5);
    for i in 0..v {
        for j in 0..v {
            let value = if i == j {
                1.0
            } else if ep.is_labeled_support(i) && ep.is_labeled_support(j) {
                if ep.node_slot(i) == ep.node_slot(j) {
                    1.0
                } else {
                    0.0
                }
            } else {
                0.5
            };
            a.set2(i, j, value);
        }
    }
    a
}

/// `(Mq, Ms)`: `Mq[i,j] = 1` iff node `i` is a query, `Ms[i,j] = 1` iff node
/// `j` is a labeled support node.
pub fn build_masks(ep: &Episode) -> (Tensor, Tensor) {
    let v = ep.num_nodes();
    let mut mq = Tensor::zeros(&[v, v]);
    let mut ms = Tensor::zeros(&[v, v]);
    for i in 0..v {
        for j in 0..v {
            if ep.is_query(i) {
                mq.set2(i, j, 1.0);
            }
            if ep.is_labeled_support(j) {
                ms.set2(i, j, 1.0);
            }
        }
    }
    (mq, ms)
}

/// `(targets, valid)`: same-class indicator over all pairs, and the
/// query-row × labeled-support-column entries that the loss reads.
pub fn edge_targets(ep: &Episode) -> (Tensor, Tensor) {
    let v = ep.num_nodes();
    let mut targets = Tensor::zeros(&[v, v]);
    let mut valid = Tensor::zeros(&[v, v]);
    for i in 0..v {
        for j in 0..v {
            if ep.node_slot(i) == ep.node_slot(j) {
                targets.set2(i, j, 1.0);
            }
            if ep.is_query(i) && ep.is_labeled_support(j) {
                valid.set2(i, j, 1.0);
            }
        }
    }
    (targets, valid)
}

#[derive(Debug, Clone, Copy)]
pub struct NormalizedAdjacency {
    /// `D^{-1/2} Ã D^{-1/2}`.
    pub adjacency: Var,
    /// Row sums of `Ã`, shape `[V, 1]`.
    pub degree: Var,
}

/// Symmetric degree normalization, differentiable through `Ã`.
pub fn normalize_adjacency(tape: &mut Tape, a_tilde: Var) -> Result<NormalizedAdjacency> {
    let shape = tape.shape(a_tilde);
    if shape.len() != 2 || shape[0] != shape[1] {
        return Err(Error::Dimension {
            op: "normalize_adjacency",
            detail: alloc::format!("expected a square matrix, got {:?}", shape),
        });
    }
    if tape.value(a_tilde).data().iter().any(|&v| v < 0.0) {
        return Err(Error::Domain {
            op: "normalize_adjacency",
            detail: "negative adjacency entry".into(),
        });
    }
    let degree = tape.row_sum(a_tilde);
    if let Some(row) = tape.value(degree).data().iter().position(|&d| d <= 0.0) {
        return Err(Error::ZeroDegree { row });
    }
    let guarded = tape.affine(degree, 1.0, DEGREE_EPS);
    let inv_sqrt = tape.unary(guarded, crate::diffcore::Unary::Powf(-0.5))?;
    let inv_sqrt_t = tape.transpose(inv_sqrt)?;
    let scale = tape.matmul(inv_sqrt, inv_sqrt_t)?;
    let adjacency = tape.mul(a_tilde, scale)?;
    Ok(NormalizedAdjacency { adjacency, degree })
}

/// Value-only convenience wrapper around [`normalize_adjacency`].
pub fn normalize_tensor(a_tilde: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let a = tape.constant(a_tilde.clone());
    let n = normalize_adjacency(&mut tape, a)?;
    Ok(tape.value(n.adjacency).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::RngStream;
    use crate::episode::{apply_label_budget, make_synthetic_dataset, sample_episode};

    fn episode(n: usize, k: usize, q: usize, seed: u64) -> Episode {
        let ds = make_synthetic_dataset(8, 3, 0.2, 12, &mut RngStream::new(seed)).unwrap();
        sample_episode(&ds, n, k, q, &mut RngStream::new(seed + 1), None).unwrap()
    }

    #[test]
    fn init_cases() {
        let ep = episode(3, 2, 3, 1);
        let a = init_adjacency(&ep);
        // support 0,1 are slot 0; support 2 is slot 1; node 6 is a query
        assert_eq!(a.get2(0, 1), 1.0);
        assert_eq!(a.get2(0, 2), 0.0);
        assert_eq!(a.get2(6, 0), 0.5);
        assert_eq!(a.get2(0, 6), 0.5);
        assert_eq!(a.get2(6, 6), 1.0);
    }

    #[test]
    fn unlabeled_support_is_query_like() {
        let ep = episode(3, 5, 3, 2);
        let ep = apply_label_budget(&ep, 0.2, &mut RngStream::new(0)).unwrap();
        let a = init_adjacency(&ep);
        let (_, ms) = build_masks(&ep);
        for i in 0..ep.support.len() {
            for j in 0..ep.support.len() {
                if i != j && !(ep.support[i].labeled && ep.support[j].labeled) {
                    assert_eq!(a.get2(i, j), 0.5);
                }
            }
            if !ep.support[i].labeled {
                assert!((0..ep.num_nodes()).all(|r| ms.get2(r, i) == 0.0));
            }
        }
    }

    #[test]
    fn normalization_reference_cases() {
        let eye = Tensor::new(&[3, 3], alloc::vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        let n = normalize_tensor(&eye).unwrap();
        for (a, b) in n.data().iter().zip(eye.data()) {
            assert!((a - b).abs() < 1e-11);
        }
        let ones = Tensor::ones(&[2, 2]);
        let n = normalize_tensor(&ones).unwrap();
        assert!(n.data().iter().all(|v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn zero_degree_row_reported() {
        let a = Tensor::new(&[2, 2], alloc::vec![1., 0., 0., 0.]).unwrap();
        assert_eq!(normalize_tensor(&a), Err(Error::ZeroDegree { row: 1 }));
        let neg = Tensor::new(&[1, 1], alloc::vec![-1.]).unwrap();
        assert!(matches!(normalize_tensor(&neg), Err(Error::Domain { .. })));
    }

    #[test]
    fn masks_five_way_one_shot() {
        let ep = episode(5, 1, 5, 3);
        let (mq, ms) = build_masks(&ep);
        let rows = (0..10).filter(|&i| (0..10).any(|j| mq.get2(i, j) != 0.0)).count();
        let cols = (0..10).filter(|&j| (0..10).any(|i| ms.get2(i, j) != 0.0)).count();
        assert_eq!((rows, cols), (5, 5));
        let (t, valid) = edge_targets(&ep);
        let positives = t.zip(&valid, |a, b| a * b).sum();
        assert_eq!(positives, 5.0);
        assert_eq!(valid.sum(), 25.0);
    }

    #[test]
    fn no_queries_means_empty_query_mask() {
        let ep = episode(3, 1, 0, 4);
        let (mq, _) = build_masks(&ep);
        assert_eq!(mq.sum(), 0.0);
    }

    #[test]
    fn target_values() {
        let ep = episode(3, 1, 3, 5);
        let (t, _) = edge_targets(&ep);
        for qi in 0..3 {
            let i = 3 + qi;
            for j in 0..3 {
                let want = if ep.query[qi].slot == ep.support[j].slot { 1.0 } else { 0.0 };
                assert_eq!(t.get2(i, j), want);
            }
        }
    }
}
