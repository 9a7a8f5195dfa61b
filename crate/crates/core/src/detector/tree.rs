//! CART decision trees: Gini impurity, exhaustive midpoint splits, and
//! recursive fitting with per-node feature subsampling.

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, DetectorError};

/// Gini impurity from class counts: 1 − p₀² − p₁².
pub fn gini_counts(pos: usize, neg: usize) -> f64 {
    let n = (pos + neg) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let p = pos as f64 / n;
    let q = neg as f64 / n;
    1.0 - p * p - q * q
}

/// Gini impurity of a label multiset; errors on an empty node.
pub fn gini(labels: &[u8]) -> Result<f64, DetectorError> {
    if labels.is_empty() {
        return Err(DetectorError::EmptyNode);
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    Ok(gini_counts(pos, labels.len() - pos))
}

fn weighted_decrease(
    parent: f64,
    n: usize,
    pos_left: usize,
    neg_left: usize,
    pos_right: usize,
    neg_right: usize,
) -> f64 {
    let nl = (pos_left + neg_left) as f64;
    let nr = (pos_right + neg_right) as f64;
    let n = n as f64;
    parent - (nl / n) * gini_counts(pos_left, neg_left) - (nr / n) * gini_counts(pos_right, neg_right)
}

/// A chosen split: send `x[feature] <= threshold` left.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub decrease: f64,
}

/// Exhaustive search over every candidate feature and every midpoint
/// between consecutive distinct values, maximizing the Gini decrease.
/// Ties resolve to the lower feature index, then the lower threshold.
/// Returns `None` when no split yields a positive decrease.
pub fn best_split(data: &Dataset, indices: &[usize], candidates: &[usize]) -> Option<Split> {
    if indices.len() < 2 {
        return None;
    }
    let pos_total = indices
        .iter()
        .filter(|&&i| data.labels[i] == 1)
        .count();
    let neg_total = indices.len() - pos_total;
    let parent = gini_counts(pos_total, neg_total);

    let mut sorted_candidates = candidates.to_vec();
    sorted_candidates.sort_unstable();

    let mut best: Option<Split> = None;
    let mut pairs: Vec<(f64, u8)> = Vec::with_capacity(indices.len());
    for &feature in &sorted_candidates {
        pairs.clear();
        pairs.extend(
            indices
                .iter()
                .map(|&i| (data.features[i][feature], data.labels[i])),
        );
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut pos_left = 0usize;
        let mut neg_left = 0usize;
        for w in 0..pairs.len() - 1 {
            if pairs[w].1 == 1 {
                pos_left += 1;
            } else {
                neg_left += 1;
            }
            let (a, b) = (pairs[w].0, pairs[w + 1].0);
            if a == b {
                continue;
            }
            let threshold = (a + b) / 2.0;
            // Adjacent representables can collapse the midpoint onto an
            // endpoint; no separating threshold exists there.
            if !(threshold > a && threshold < b) {
                continue;
            }
            let decrease = weighted_decrease(
                parent,
                indices.len(),
                pos_left,
                neg_left,
                pos_total - pos_left,
                neg_total - neg_left,
            );
            let better = match &best {
                None => decrease > 0.0,
                Some(b) => decrease > b.decrease,
            };
            if better {
                best = Some(Split {
                    feature,
                    threshold,
                    decrease,
                });
            }
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Internal {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        prob: f64,
    },
}

/// A fitted tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
    pub max_depth: usize,
}

/// Per-tree fitting parameters (the forest derives these from its own
/// config; a plain decision tree uses all features).
#[derive(Debug, Clone, Copy)]
pub struct TreeParams {
    pub max_depth: usize,
    pub features_per_split: usize,
    pub min_samples_leaf: usize,
}

impl DecisionTree {
    /// Positive-class probability for one sample.
    pub fn proba(&self, sample: &[f64; 5]) -> f64 {
        let mut node = 0usize;
        loop {
            match self.nodes[node] {
                Node::Leaf { prob } => return prob,
                Node::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if sample[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    /// Longest root-to-leaf path, in split count.
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Internal { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

fn sample_features(rng: &mut ChaCha20Rng, n_features: usize, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n_features).collect();
    for i in 0..k.min(n_features) {
        let j = rng.gen_range(i..n_features);
        idx.swap(i, j);
    }
    idx.truncate(k.min(n_features));
    idx.sort_unstable();
    idx
}

/// Recursive CART fit over the rows named by `indices`, consuming the
/// provided rng stream for per-node feature subsampling.
pub fn fit_tree(
    data: &Dataset,
    indices: &[usize],
    params: &TreeParams,
    rng: &mut ChaCha20Rng,
) -> Result<DecisionTree, DetectorError> {
    if indices.is_empty() {
        return Err(DetectorError::EmptyNode);
    }
    let mut nodes = Vec::new();
    let mut scratch = indices.to_vec();
    build(data, &mut scratch, 0, params, rng, &mut nodes);
    Ok(DecisionTree {
        nodes,
        max_depth: params.max_depth,
    })
}

fn build(
    data: &Dataset,
    indices: &mut [usize],
    depth: usize,
    params: &TreeParams,
    rng: &mut ChaCha20Rng,
    nodes: &mut Vec<Node>,
) -> usize {
    let pos = indices.iter().filter(|&&i| data.labels[i] == 1).count();
    let prob = pos as f64 / indices.len() as f64;

    let stop = depth >= params.max_depth || indices.len() < 2 * params.min_samples_leaf.max(1);
    let split = if stop {
        None
    } else {
        let candidates = sample_features(rng, 5, params.features_per_split);
        best_split(data, indices, &candidates)
    };

    match split {
        None => {
            nodes.push(Node::Leaf { prob });
            nodes.len() - 1
        }
        Some(split) => {
            // Partition in place: left half holds x <= threshold.
            let mut mid = 0;
            for i in 0..indices.len() {
                if data.features[indices[i]][split.feature] <= split.threshold {
                    indices.swap(i, mid);
                    mid += 1;
                }
            }
            let at = nodes.len();
            nodes.push(Node::Leaf { prob: 0.0 }); // placeholder
            let (left_idx, right_idx) = indices.split_at_mut(mid);
            let left = build(data, left_idx, depth + 1, params, rng, nodes);
            let right = build(data, right_idx, depth + 1, params, rng, nodes);
            nodes[at] = Node::Internal {
                feature: split.feature,
                threshold: split.threshold,
                left,
                right,
            };
            at
        }
    }
}
