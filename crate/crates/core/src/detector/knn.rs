//! K-nearest-neighbors baseline with z-score standardization.
//!
//! Raw feature scales differ by two orders of magnitude, so distances
//! run over features standardized by the training mean and standard
//! deviation. Distance ties break toward the lower training index.

use super::{Classifier, Dataset, DetectorError};

#[derive(Debug, Clone, PartialEq)]
pub struct KnnModel {
    pub k: usize,
    mean: [f64; 5],
    std: [f64; 5],
    points: Vec<[f64; 5]>,
    labels: Vec<u8>,
}

/// Fits by memorizing the standardized training set. `k` must be odd
/// (no vote ties) and at most n.
pub fn fit_knn(data: &Dataset, k: usize) -> Result<KnnModel, DetectorError> {
    if k.is_multiple_of(2) {
        return Err(DetectorError::EvenK);
    }
    if k > data.n() {
        return Err(DetectorError::KExceedsN { k, n: data.n() });
    }
    let n = data.n() as f64;
    let mut mean = [0.0; 5];
    for f in &data.features {
        for (m, v) in mean.iter_mut().zip(f) {
            *m += v / n;
        }
    }
    let mut std = [0.0; 5];
    for f in &data.features {
        for j in 0..5 {
            std[j] += (f[j] - mean[j]).powi(2) / n;
        }
    }
    for s in &mut std {
        *s = s.sqrt();
        if *s == 0.0 {
            *s = 1.0;
        }
    }
    let points = data
        .features
        .iter()
        .map(|f| standardize(f, &mean, &std))
        .collect();
    Ok(KnnModel {
        k,
        mean,
        std,
        points,
        labels: data.labels.clone(),
    })
}

fn standardize(f: &[f64; 5], mean: &[f64; 5], std: &[f64; 5]) -> [f64; 5] {
    let mut out = [0.0; 5];
    for j in 0..5 {
        out[j] = (f[j] - mean[j]) / std[j];
    }
    out
}

impl KnnModel {
    /// Fraction of the k nearest training points labeled positive.
    pub fn positive_fraction(&self, sample: &[f64; 5]) -> Result<f64, DetectorError> {
        if sample.iter().any(|v| !v.is_finite()) {
            return Err(DetectorError::NonFiniteFeature);
        }
        let q = standardize(sample, &self.mean, &self.std);
        let mut dist: Vec<(f64, usize)> = self
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let d: f64 = p.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum();
                (d, i)
            })
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if self.k < dist.len() {
            dist.select_nth_unstable_by(self.k - 1, cmp);
            dist.truncate(self.k);
        }
        let positive = dist.iter().filter(|(_, i)| self.labels[*i] == 1).count();
        Ok(positive as f64 / self.k as f64)
    }

    /// Majority vote among the k nearest.
    pub fn predict(&self, sample: &[f64; 5]) -> Result<u8, DetectorError> {
        Ok((self.positive_fraction(sample)? >= 0.5) as u8)
    }
}

impl Classifier for KnnModel {
    fn score(&self, sample: &[f64; 5]) -> Result<f64, DetectorError> {
        self.positive_fraction(sample)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Dataset {
        Dataset {
            features: vec![
                [55.0, 120.0, 620.0, 1.0, 1.0],
                [60.0, 122.0, 640.0, 0.0, 1.0],
                [100.0, 115.0, 700.0, 0.0, 0.0],
                [120.0, 118.0, 690.0, 0.0, 0.0],
                [140.0, 112.0, 710.0, 0.0, 0.0],
            ],
            labels: vec![1, 1, 0, 0, 0],
        }
    }

    #[test]
    fn k1_returns_the_exact_training_label() {
        let data = toy();
        let model = fit_knn(&data, 1).unwrap();
        for i in 0..data.n() {
            assert_eq!(model.predict(&data.features[i]).unwrap(), data.labels[i]);
        }
    }

    #[test]
    fn k_equals_n_votes_the_majority_class() {
        let data = toy();
        let model = fit_knn(&data, 5).unwrap();
        // 3 of 5 training labels are 0, so any query votes 0.
        assert_eq!(model.predict(&[58.0, 121.0, 630.0, 1.0, 1.0]).unwrap(), 0);
        assert_eq!(model.predict(&[300.0, 90.0, 500.0, 0.0, 0.0]).unwrap(), 0);
    }

    #[test]
    fn even_k_is_rejected() {
        assert!(matches!(fit_knn(&toy(), 2), Err(DetectorError::EvenK)));
    }

    #[test]
    fn k_cannot_exceed_n() {
        assert!(matches!(
            fit_knn(&toy(), 7),
            Err(DetectorError::KExceedsN { k: 7, n: 5 })
        ));
    }

    #[test]
    fn distance_ties_break_to_lower_index() {
        // Two training points at the same location with opposite labels.
        let data = Dataset {
            features: vec![
                [1.0, 0.0, 0.0, 0.0, 0.0],
                [1.0, 0.0, 0.0, 0.0, 0.0],
                [5.0, 0.0, 0.0, 0.0, 0.0],
            ],
            labels: vec![1, 0, 0],
        };
        let model = fit_knn(&data, 1).unwrap();
        assert_eq!(model.predict(&[1.0, 0.0, 0.0, 0.0, 0.0]).unwrap(), 1);
    }
}
