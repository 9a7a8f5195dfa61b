//! Hypoglycemia detection models: a from-scratch random forest plus
//! decision-tree and KNN baselines, with the split/evaluation machinery
//! they share.
//!
//! Training is deterministic: the forest derives one rng stream per
//! tree from (seed, tree index), so a (data, config) pair always yields
//! the same model and the same predictions, bit for bit.

pub mod knn;
pub mod metrics;
pub mod model_io;
pub mod tree;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::fog::{VitalsSample, MODEL_FEATURES};
use sha2::{Digest, Sha256};

pub use knn::{fit_knn, KnnModel};
pub use metrics::{evaluate, kfold_split, roc_curve, train_test_split, Metrics, RocPoint};
pub use model_io::{load_model, save_model};
pub use tree::{best_split, fit_tree, gini, DecisionTree, Node, Split, TreeParams};

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("node has no samples")]
    EmptyNode,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("sample contains a non-finite feature")]
    NonFiniteFeature,
    #[error("{n} samples cannot fill {k} folds")]
    TooFewSamples { n: usize, k: usize },
    #[error("k must be odd")]
    EvenK,
    #[error("k={k} exceeds {n} training samples")]
    KExceedsN { k: usize, n: usize },
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("test set has a single class; AUC is undefined")]
    SingleClassTest,
    #[error("dataset has no labels")]
    Unlabeled,
    #[error("model file: {0}")]
    ModelFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Feature matrix (n × 5, fixed model-feature order) plus binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<[f64; 5]>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn from_samples(samples: &[VitalsSample]) -> Result<Dataset, DetectorError> {
        let mut features = Vec::with_capacity(samples.len());
        let mut labels = Vec::with_capacity(samples.len());
        for s in samples {
            let f = s.features();
            if f.iter().any(|v| !v.is_finite()) {
                return Err(DetectorError::NonFiniteFeature);
            }
            features.push(f);
            labels.push(s.label.ok_or(DetectorError::Unlabeled)?);
        }
        Ok(Dataset { features, labels })
    }

    pub fn n(&self) -> usize {
        self.features.len()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: indices.iter().map(|&i| self.features[i]).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Forest hyperparameters. Defaults: 100 trees of depth 4, seed 42,
/// ⌈√5⌉ = 3 candidate features per split, bootstrap resampling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub seed: u64,
    pub features_per_split: usize,
    pub bootstrap: bool,
    pub min_samples_leaf: usize,
}

impl Default for ForestConfig {
    fn default() -> ForestConfig {
        ForestConfig {
            n_trees: 100,
            max_depth: 4,
            seed: 42,
            features_per_split: 3,
            bootstrap: true,
            min_samples_leaf: 1,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<(), DetectorError> {
        if self.n_trees == 0 {
            return Err(DetectorError::InvalidConfig("n_trees must be >= 1".into()));
        }
        if self.max_depth == 0 {
            return Err(DetectorError::InvalidConfig("max_depth must be >= 1".into()));
        }
        if !(1..=5).contains(&self.features_per_split) {
            return Err(DetectorError::InvalidConfig(
                "features_per_split must be in 1..=5".into(),
            ));
        }
        Ok(())
    }
}

/// Training provenance stored with the model.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingMeta {
    pub n_train: u64,
    pub seed: u64,
    pub trained_at: u32,
    pub feature_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomForest {
    pub trees: Vec<DecisionTree>,
    pub config: ForestConfig,
    pub meta: TrainingMeta,
}

/// Anything that scores a sample with a positive-class probability.
pub trait Classifier {
    fn score(&self, sample: &[f64; 5]) -> Result<f64, DetectorError>;

    /// Binary label at the given threshold (`score >= threshold`).
    fn classify_at(&self, sample: &[f64; 5], threshold: f64) -> Result<u8, DetectorError> {
        Ok((self.score(sample)? >= threshold) as u8)
    }

    fn classify(&self, sample: &[f64; 5]) -> Result<u8, DetectorError> {
        self.classify_at(sample, 0.5)
    }
}

/// Fits `config.n_trees` trees, each on a bootstrap resample of size n
/// (or the full data when `bootstrap` is off), with a per-tree rng
/// stream derived from (seed, tree index).
pub fn fit_forest(data: &Dataset, config: ForestConfig) -> Result<RandomForest, DetectorError> {
    config.validate()?;
    if data.n() == 0 {
        return Err(DetectorError::EmptyNode);
    }
    let params = TreeParams {
        max_depth: config.max_depth,
        features_per_split: config.features_per_split,
        min_samples_leaf: config.min_samples_leaf,
    };
    let n = data.n();
    let mut trees = Vec::with_capacity(config.n_trees);
    for tree_index in 0..config.n_trees {
        let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
        rng.set_stream(tree_index as u64 + 1);
        let indices: Vec<usize> = if config.bootstrap {
            (0..n).map(|_| rng.gen_range(0..n)).collect()
        } else {
            (0..n).collect()
        };
        trees.push(tree::fit_tree(data, &indices, &params, &mut rng)?);
    }
    Ok(RandomForest {
        trees,
        config,
        meta: TrainingMeta {
            n_train: n as u64,
            seed: config.seed,
            trained_at: 0,
            feature_names: MODEL_FEATURES.iter().map(|s| s.to_string()).collect(),
        },
    })
}

impl RandomForest {
    /// Mean of the trees' leaf probabilities.
    pub fn predict_proba(&self, sample: &[f64; 5]) -> Result<f64, DetectorError> {
        if sample.iter().any(|v| !v.is_finite()) {
            return Err(DetectorError::NonFiniteFeature);
        }
        let sum: f64 = self.trees.iter().map(|t| t.proba(sample)).sum();
        Ok(sum / self.trees.len() as f64)
    }

    /// Label at the given threshold; probability ties go positive.
    pub fn predict(&self, sample: &[f64; 5], threshold: f64) -> Result<u8, DetectorError> {
        Ok((self.predict_proba(sample)? >= threshold) as u8)
    }

    /// Digest identifying this exact model (SHA-256 of its serialized
    /// bytes).
    pub fn model_id(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(model_io::to_bytes(self));
        hasher.finalize().into()
    }
}

impl Classifier for RandomForest {
    fn score(&self, sample: &[f64; 5]) -> Result<f64, DetectorError> {
        self.predict_proba(sample)
    }
}

impl Classifier for DecisionTree {
    fn score(&self, sample: &[f64; 5]) -> Result<f64, DetectorError> {
        if sample.iter().any(|v| !v.is_finite()) {
            return Err(DetectorError::NonFiniteFeature);
        }
        Ok(self.proba(sample))
    }
}

/// A detection outcome as stored on the chain and fed to dosing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionResult {
    pub probability: f64,
    pub label: u8,
    pub timestamp: u32,
    pub model_id: [u8; 32],
}

impl DetectionResult {
    /// Payload bytes: probability (8, BE bits) || label (1) ||
    /// timestamp (4, BE) || model id (32).
    pub fn payload_bytes(&self) -> [u8; 45] {
        let mut out = [0u8; 45];
        out[0..8].copy_from_slice(&self.probability.to_bits().to_be_bytes());
        out[8] = self.label;
        out[9..13].copy_from_slice(&self.timestamp.to_be_bytes());
        out[13..45].copy_from_slice(&self.model_id);
        out
    }

    pub fn from_payload_bytes(bytes: &[u8]) -> Option<DetectionResult> {
        if bytes.len() != 45 {
            return None;
        }
        Some(DetectionResult {
            probability: f64::from_bits(u64::from_be_bytes(bytes[0..8].try_into().unwrap())),
            label: bytes[8],
            timestamp: u32::from_be_bytes(bytes[9..13].try_into().unwrap()),
            model_id: bytes[13..45].try_into().unwrap(),
        })
    }
}
