//! Datasets, N-way K-shot episode sampling and correlated episode sequences.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::{index, SliceRandom};
use rand_distr::{Distribution, StandardNormal};

use crate::diffcore::{purpose, RngStream};
use crate::error::{Error, Result};

/// Labeled feature vectors, one row per item.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    dim: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
    class_index: BTreeMap<usize, Vec<usize>>,
    num_classes: usize,
}

impl Dataset {
    /// Labels must be dense in `[0, num_classes)`.
    pub fn new(name: impl Into<String>, dim: usize, features: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("feature dimension must be positive".into()));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::Dimension {
                op: "dataset",
                detail: format!("{} labels need {} features, got {}", labels.len(), labels.len() * dim, features.len()),
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset features"));
        }
        let mut class_index: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &l) in labels.iter().enumerate() {
            class_index.entry(l).or_default().push(i);
        }
        let num_classes = class_index.len();
        if let Some((&max, _)) = class_index.iter().next_back() {
            if max + 1 != num_classes {
                return Err(Error::Config(format!(
                    "labels are not dense: {num_classes} distinct labels but maximum label {max}"
                )));
            }
        }
        Ok(Self {
            name: name.into(),
            dim,
            features,
            labels,
            class_index,
            num_classes,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self, item: usize) -> &[f64] {
        &self.features[item * self.dim..(item + 1) * self.dim]
    }

    pub fn label(&self, item: usize) -> usize {
        self.labels[item]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn items_of(&self, class: usize) -> &[usize] {
        self.class_index.get(&class).map_or(&[], |v| v.as_slice())
    }

    pub fn class_index(&self) -> &BTreeMap<usize, Vec<usize>> {
        &self.class_index
    }

    /// Splits into classes `[0, first)` and `[first, num_classes)`, each
    /// relabeled densely from zero.
    pub fn split_classes(&self, first: usize) -> Result<(Dataset, Dataset)> {
        if first == 0 || first >= self.num_classes {
            return Err(Error::Config(format!(
                "cannot split {} classes at {first}",
                self.num_classes
            )));
        }
        let part = |lo: usize, hi: usize, suffix: &str| {
            let mut feats = Vec::new();
            let mut labels = Vec::new();
            for (i, &l) in self.labels.iter().enumerate() {
                if (lo..hi).contains(&l) {
                    feats.extend_from_slice(self.features(i));
                    labels.push(l - lo);
                }
            }
            Dataset::new(format!("{}-{suffix}", self.name), self.dim, feats, labels)
        };
        Ok((part(0, first, "a")?, part(first, self.num_classes, "b")?))
    }
}

/// Gaussian class clusters around random unit-norm centers.
pub fn make_synthetic_dataset(
    num_classes: usize,
    dim: usize,
    spread: f64,
    items_per_class: usize,
    rng: &mut RngStream,
) -> Result<Dataset> {
    if num_classes < 2 {
        return Err(Error::Config("synthetic dataset needs at least 2 classes".into()));
    }
    if spread <= 0.0 || !spread.is_finite() {
        return Err(Error::Config("spread must be positive".into()));
    }
    if dim == 0 || items_per_class == 0 {
        return Err(Error::Config("dimension and items per class must be positive".into()));
    }
    let mut features = Vec::with_capacity(num_classes * items_per_class * dim);
    let mut labels = Vec::with_capacity(num_classes * items_per_class);
    for c in 0..num_classes {
        let mut center: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = libm::sqrt(center.iter().map(|v| v * v).sum::<f64>());
        center.iter_mut().for_each(|v| *v /= norm);
        for _ in 0..items_per_class {
            features.extend(center.iter().map(|m| {
                let z: f64 = StandardNormal.sample(rng);
                m + spread * z
            }));
            labels.push(c);
        }
    }
    Dataset::new(format!("synthetic-{num_classes}x{items_per_class}-d{dim}"), dim, features, labels)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupportItem {
    pub features: Vec<f64>,
    pub slot: usize,
    pub labeled: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryItem {
    pub features: Vec<f64>,
    pub slot: usize,
}

/// One N-way K-shot task. Support items are ordered by class slot then shot;
/// query items are in random order so position carries no label.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub n_way: usize,
    pub k_shot: usize,
    pub n_query: usize,
    /// Dataset class of each slot.
    pub classes: Vec<usize>,
    /// Dataset item of each support entry, then each query entry.
    pub items: Vec<usize>,
    pub support: Vec<SupportItem>,
    pub query: Vec<QueryItem>,
}

impl Episode {
    pub fn num_nodes(&self) -> usize {
        self.support.len() + self.query.len()
    }

    pub fn dim(&self) -> usize {
        self.support
            .first()
            .map(|s| s.features.len())
            .or_else(|| self.query.first().map(|q| q.features.len()))
            .unwrap_or(0)
    }

    /// Class slot of node `i` (support nodes first, then queries).
    pub fn node_slot(&self, i: usize) -> usize {
        if i < self.support.len() {
            self.support[i].slot
        } else {
            self.query[i - self.support.len()].slot
        }
    }

    pub fn is_query(&self, i: usize) -> bool {
        i >= self.support.len()
    }

    pub fn is_labeled_support(&self, i: usize) -> bool {
        i < self.support.len() && self.support[i].labeled
    }

    pub fn node_features(&self, i: usize) -> &[f64] {
        if i < self.support.len() {
            &self.support[i].features
        } else {
            &self.query[i - self.support.len()].features
        }
    }

    pub fn query_slots(&self) -> Vec<usize> {
        self.query.iter().map(|q| q.slot).collect()
    }

    /// Drops unlabeled support items, leaving only labeled ones in the graph.
    pub fn labeled_only(&self) -> Episode {
        let mut out = self.clone();
        let keep: Vec<bool> = self.support.iter().map(|s| s.labeled).collect();
        out.support = self.support.iter().filter(|s| s.labeled).cloned().collect();
        let mut items = Vec::with_capacity(self.items.len());
        for (i, &it) in self.items.iter().enumerate() {
            if i >= keep.len() || keep[i] {
                items.push(it);
            }
        }
        out.items = items;
        let per_class = (0..self.n_way)
            .map(|c| out.support.iter().filter(|s| s.slot == c).count())
            .min()
            .unwrap_or(0);
        out.k_shot = per_class;
        out
    }
}

/// Per-class query count: `n_query / n_way`, with the remainder going to the
/// lowest slots.
pub fn queries_for_slot(n_way: usize, n_query: usize, slot: usize) -> usize {
    n_query / n_way + usize::from(slot < n_query % n_way)
}

/// Samples an episode. `class_pool` restricts the candidate classes.
pub fn sample_episode(
    ds: &Dataset,
    n_way: usize,
    k_shot: usize,
    n_query: usize,
    rng: &mut RngStream,
    class_pool: Option<&[usize]>,
) -> Result<Episode> {
    if n_way == 0 || k_shot == 0 {
        return Err(Error::Sampling("n_way and k_shot must be positive".into()));
    }
    let pool: Vec<usize> = match class_pool {
        Some(p) => p.to_vec(),
        None => ds.class_index.keys().copied().collect(),
    };
    if pool.len() < n_way {
        return Err(Error::Sampling(format!(
            "{n_way}-way episode needs {n_way} classes, pool has {}",
            pool.len()
        )));
    }
    let picked = index::sample(rng, pool.len(), n_way);
    let classes: Vec<usize> = picked.iter().map(|i| pool[i]).collect();
    sample_with_classes(ds, &classes, k_shot, n_query, rng)
}

/// Samples support and query items for a fixed slot → class assignment.
pub fn sample_with_classes(
    ds: &Dataset,
    classes: &[usize],
    k_shot: usize,
    n_query: usize,
    rng: &mut RngStream,
) -> Result<Episode> {
    let n_way = classes.len();
    if n_way == 0 || k_shot == 0 {
        return Err(Error::Sampling("n_way and k_shot must be positive".into()));
    }
    let mut support = Vec::with_capacity(n_way * k_shot);
    let mut support_items = Vec::with_capacity(n_way * k_shot);
    let mut query: Vec<(QueryItem, usize)> = Vec::with_capacity(n_query);
    for (slot, &class) in classes.iter().enumerate() {
        let items = ds.items_of(class);
        let q = queries_for_slot(n_way, n_query, slot);
        if items.len() < k_shot + q {
            return Err(Error::Sampling(format!(
                "class {class} has {} items, needs {}",
                items.len(),
                k_shot + q
            )));
        }
        let chosen = index::sample(rng, items.len(), k_shot + q);
        for (n, i) in chosen.iter().enumerate() {
            let item = items[i];
            let features = ds.features(item).to_vec();
            if n < k_shot {
                support.push(SupportItem {
                    features,
                    slot,
                    labeled: true,
                });
                support_items.push(item);
            } else {
                query.push((QueryItem { features, slot }, item));
            }
        }
    }
    query.shuffle(rng);
    let mut items = support_items;
    items.extend(query.iter().map(|(_, it)| *it));
    Ok(Episode {
        n_way,
        k_shot,
        n_query,
        classes: classes.to_vec(),
        items,
        support,
        query: query.into_iter().map(|(q, _)| q).collect(),
    })
}

/// Keeps `fraction · K` labels per class, chosen at random; the rest of the
/// support becomes unlabeled. The fraction must be `i / K` with `i ≥ 1`.
pub fn apply_label_budget(ep: &Episode, fraction: f64, rng: &mut RngStream) -> Result<Episode> {
    let k = ep.k_shot;
    let scaled = fraction * k as f64;
    let labeled = libm::round(scaled);
    if !(fraction > 0.0 && fraction <= 1.0) || libm::fabs(scaled - labeled) > 1e-9 || labeled < 1.0 {
        return Err(Error::Config(format!(
            "labeled fraction {fraction} is not i/{k} for some i in 1..={k}"
        )));
    }
    let labeled = labeled as usize;
    let mut out = ep.clone();
    for slot in 0..ep.n_way {
        let members: Vec<usize> = (0..ep.support.len())
            .filter(|&i| ep.support[i].slot == slot)
            .collect();
        let keep = index::sample(rng, members.len(), labeled.min(members.len()));
        let mut flags = alloc::vec![false; members.len()];
        for i in keep.iter() {
            flags[i] = true;
        }
        for (m, flag) in members.iter().zip(flags) {
            out.support[*m].labeled = flag;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSequence {
    pub episodes: Vec<Episode>,
    pub rho: f64,
}

impl EpisodeSequence {
    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }
}

/// Builds `T` episodes. After the first, each episode keeps the previous
/// slot → class assignment with probability `rho`, otherwise draws fresh
/// classes.
pub fn build_sequence(
    ds: &Dataset,
    t: usize,
    n_way: usize,
    k_shot: usize,
    n_query: usize,
    rho: f64,
    rng: &mut RngStream,
) -> Result<EpisodeSequence> {
    if t == 0 {
        return Err(Error::Config("sequence length must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::Config(format!("correlation {rho} outside [0, 1]")));
    }
    let mut episodes: Vec<Episode> = Vec::with_capacity(t);
    for step in 0..t {
        let mut r = rng.split(purpose::EPISODE, step as u64);
        let ep = match episodes.last() {
            Some(prev) if r.uniform() < rho => {
                let classes = prev.classes.clone();
                sample_with_classes(ds, &classes, k_shot, n_query, &mut r)?
            }
            _ => sample_episode(ds, n_way, k_shot, n_query, &mut r, None)?,
        };
        episodes.push(ep);
    }
    Ok(EpisodeSequence { episodes, rho })
}

/// How partially-labeled support enters the graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SemiStrategy {
    /// Unlabeled support nodes stay in the graph and pass messages.
    #[default]
    Semi,
    /// Unlabeled support nodes are removed.
    LabeledOnly,
}

/// Everything needed to draw training or evaluation sequences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeConfig {
    pub n_way: usize,
    pub k_shot: usize,
    pub n_query: usize,
    pub sequence_len: usize,
    pub rho: f64,
    pub labeled_fraction: f64,
    pub strategy: SemiStrategy,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            n_way: 5,
            k_shot: 1,
            n_query: 5,
            sequence_len: 8,
            rho: 0.0,
            labeled_fraction: 1.0,
            strategy: SemiStrategy::Semi,
        }
    }
}

impl EpisodeConfig {
    /// Samples a sequence and applies the label budget and strategy.
    pub fn sample(&self, ds: &Dataset, rng: &mut RngStream) -> Result<EpisodeSequence> {
        let mut seq = build_sequence(
            ds,
            self.sequence_len,
            self.n_way,
            self.k_shot,
            self.n_query,
            self.rho,
            rng,
        )?;
        if self.labeled_fraction < 1.0 {
            for (i, ep) in seq.episodes.iter_mut().enumerate() {
                let mut r = rng.split(purpose::LABELS, i as u64);
                let budgeted = apply_label_budget(ep, self.labeled_fraction, &mut r)?;
                *ep = match self.strategy {
                    SemiStrategy::Semi => budgeted,
                    SemiStrategy::LabeledOnly => budgeted.labeled_only(),
                };
            }
        }
        Ok(seq)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::collections::BTreeSet;
    use alloc::vec;

    fn toy(classes: usize, per: usize, seed: u64) -> Dataset {
        make_synthetic_dataset(classes, 4, 0.1, per, &mut RngStream::new(seed)).unwrap()
    }

    #[test]
    fn dataset_rejects_sparse_labels() {
        assert!(Dataset::new("x", 1, vec![0.0, 1.0], vec![0, 2]).is_err());
        assert!(Dataset::new("x", 2, vec![0.0, 1.0, 2.0], vec![0, 1]).is_err());
    }

    #[test]
    fn synthetic_is_deterministic() {
        assert_eq!(toy(3, 5, 7), toy(3, 5, 7));
        assert_ne!(toy(3, 5, 7), toy(3, 5, 8));
    }

    #[test]
    fn five_way_one_shot_shape() {
        let ds = toy(10, 10, 1);
        let ep = sample_episode(&ds, 5, 1, 5, &mut RngStream::new(3), None).unwrap();
        assert_eq!(ep.support.len(), 5);
        assert_eq!(ep.query.len(), 5);
        let slots: BTreeSet<usize> = ep.support.iter().map(|s| s.slot).collect();
        assert_eq!(slots, (0..5).collect());
        assert!(ep.support.iter().all(|s| s.labeled));
    }

    #[test]
    fn forced_partition_is_disjoint() {
        let ds = toy(2, 2, 1);
        let ep = sample_episode(&ds, 2, 1, 2, &mut RngStream::new(9), None).unwrap();
        let s: BTreeSet<usize> = ep.items[..2].iter().copied().collect();
        let q: BTreeSet<usize> = ep.items[2..].iter().copied().collect();
        assert!(s.is_disjoint(&q));
        assert_eq!(s.len() + q.len(), 4);
    }

    #[test]
    fn insufficient_items_or_classes() {
        let ds = toy(2, 2, 1);
        assert!(matches!(
            sample_episode(&ds, 2, 2, 2, &mut RngStream::new(0), None),
            Err(Error::Sampling(_))
        ));
        assert!(matches!(
            sample_episode(&ds, 3, 1, 0, &mut RngStream::new(0), None),
            Err(Error::Sampling(_))
        ));
    }

    #[test]
    fn class_pool_is_respected() {
        let ds = toy(10, 6, 2);
        let pool = [1, 4, 7];
        for s in 0..50 {
            let ep = sample_episode(&ds, 3, 1, 3, &mut RngStream::new(s), Some(&pool)).unwrap();
            let set: BTreeSet<usize> = ep.classes.iter().copied().collect();
            assert_eq!(set, pool.iter().copied().collect());
        }
    }

    #[test]
    fn same_seed_same_episode() {
        let ds = toy(8, 8, 4);
        let a = sample_episode(&ds, 5, 1, 5, &mut RngStream::new(21), None).unwrap();
        let b = sample_episode(&ds, 5, 1, 5, &mut RngStream::new(21), None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn uneven_queries_follow_policy() {
        assert_eq!(queries_for_slot(5, 7, 0), 2);
        assert_eq!(queries_for_slot(5, 7, 1), 2);
        assert_eq!(queries_for_slot(5, 7, 2), 1);
        let ds = toy(6, 6, 5);
        let ep = sample_episode(&ds, 5, 1, 7, &mut RngStream::new(2), None).unwrap();
        assert_eq!(ep.query.len(), 7);
    }

    #[test]
    fn label_budget_cases() {
        let ds = toy(6, 12, 3);
        let ep = sample_episode(&ds, 5, 5, 5, &mut RngStream::new(1), None).unwrap();
        let mut rng = RngStream::new(2);
        assert_eq!(apply_label_budget(&ep, 1.0, &mut rng).unwrap(), ep);
        for (fraction, want) in [(0.2, 1), (0.4, 2)] {
            let b = apply_label_budget(&ep, fraction, &mut rng).unwrap();
            for slot in 0..5 {
                let n = b.support.iter().filter(|s| s.slot == slot && s.labeled).count();
                assert_eq!(n, want);
            }
            assert_eq!(b.query, ep.query);
        }
        assert!(matches!(apply_label_budget(&ep, 0.3, &mut rng), Err(Error::Config(_))));
        assert!(apply_label_budget(&ep, 0.0, &mut rng).is_err());
    }

    #[test]
    fn labeled_only_drops_unlabeled_support() {
        let ds = toy(6, 12, 3);
        let ep = sample_episode(&ds, 5, 5, 5, &mut RngStream::new(1), None).unwrap();
        let b = apply_label_budget(&ep, 0.2, &mut RngStream::new(4)).unwrap().labeled_only();
        assert_eq!(b.support.len(), 5);
        assert_eq!(b.k_shot, 1);
        assert_eq!(b.items.len(), 10);
        assert!(b.support.iter().all(|s| s.labeled));
    }

    #[test]
    fn sequence_correlation_extremes() {
        let ds = toy(20, 8, 6);
        let seq = build_sequence(&ds, 8, 5, 1, 5, 1.0, &mut RngStream::new(3)).unwrap();
        assert_eq!(seq.len(), 8);
        assert!(seq.episodes.iter().all(|e| e.classes == seq.episodes[0].classes));
        let one = build_sequence(&ds, 1, 5, 1, 5, 0.7, &mut RngStream::new(3)).unwrap();
        assert_eq!(one.len(), 1);
        assert!(build_sequence(&ds, 0, 5, 1, 5, 0.0, &mut RngStream::new(3)).is_err());
        assert!(build_sequence(&ds, 2, 5, 1, 5, 1.5, &mut RngStream::new(3)).is_err());
    }

    #[test]
    fn split_relabels_densely() {
        let ds = toy(5, 3, 1);
        let (a, b) = ds.split_classes(3).unwrap();
        assert_eq!(a.num_classes(), 3);
        assert_eq!(b.num_classes(), 2);
        assert_eq!(b.len(), 6);
        assert_eq!(b.features(0), ds.features(9));
    }
}
