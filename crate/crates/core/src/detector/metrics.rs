//! Accuracy, confusion counts, ROC/AUC, and dataset splitting.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::{Classifier, Dataset, DetectorError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub roc: Vec<RocPoint>,
    /// None when the test labels contain a single class.
    pub auc: Option<f64>,
}

/// ROC sweep over every distinct score threshold (predict positive at
/// `score >= threshold`), plus the trapezoidal AUC.
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<(Vec<RocPoint>, f64), DetectorError> {
    if scores.is_empty() || scores.len() != labels.len() {
        return Err(DetectorError::EmptyTestSet);
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(DetectorError::NonFiniteFeature);
    }
    let positives = labels.iter().filter(|&&l| l == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(DetectorError::SingleClassTest);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        // Consume the whole tie group at this score.
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold,
            fpr: fp as f64 / negatives as f64,
            tpr: tp as f64 / positives as f64,
        });
    }

    let mut auc = 0.0;
    for w in points.windows(2) {
        auc += (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0;
    }
    Ok((points, auc))
}

/// Confusion counts and accuracy at threshold 0.5, plus the ROC curve
/// when both classes are present.
pub fn evaluate<C: Classifier>(model: &C, test: &Dataset) -> Result<Metrics, DetectorError> {
    if test.n() == 0 {
        return Err(DetectorError::EmptyTestSet);
    }
    let mut scores = Vec::with_capacity(test.n());
    for f in &test.features {
        scores.push(model.score(f)?);
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (score, &label) in scores.iter().zip(&test.labels) {
        let predicted = (*score >= 0.5) as u8;
        match (predicted, label) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 0) => tn += 1,
            _ => fn_ += 1,
        }
    }
    let accuracy = (tp + tn) as f64 / test.n() as f64;
    let (roc, auc) = match roc_curve(&scores, &test.labels) {
        Ok((points, auc)) => (points, Some(auc)),
        Err(DetectorError::SingleClassTest) => (Vec::new(), None),
        Err(e) => return Err(e),
    };
    Ok(Metrics {
        accuracy,
        tp,
        fp,
        tn,
        fn_,
        roc,
        auc,
    })
}

fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        indices.swap(i, j);
    }
    indices
}

/// `k` disjoint, covering folds whose sizes differ by at most one,
/// shuffled by `seed`.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>, DetectorError> {
    if k == 0 || n < k {
        return Err(DetectorError::TooFewSamples { n, k });
    }
    let indices = shuffled_indices(n, seed);
    let base = n / k;
    let remainder = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut at = 0;
    for fold in 0..k {
        let size = base + usize::from(fold < remainder);
        folds.push(indices[at..at + size].to_vec());
        at += size;
    }
    Ok(folds)
}

/// Shuffled holdout split; the test set takes `round(fraction * n)`
/// indices from the end of the shuffle.
pub fn train_test_split(n: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let indices = shuffled_indices(n, seed);
    let test_size = ((test_fraction * n as f64) + 0.5).floor() as usize;
    let split = n - test_size.min(n);
    (indices[..split].to_vec(), indices[split..].to_vec())
}
