//! Versioned binary model file.
//!
//! Layout (all integers big-endian):
//!
//! ```text
//! magic "GGRF" || format_version u32
//! n_trees u32 || max_depth u32 || seed u64 || features_per_split u32
//! bootstrap u8 || min_samples_leaf u32
//! n_train u64 || trained_at u32
//! n_features u32 || per feature: name_len u32 || name bytes
//! per tree: node_count u32 || nodes
//! node = 0x00 feature u32 threshold f64-bits left u32 right u32
//!      | 0x01 prob f64-bits
//! ```
//!
//! Floats travel as raw bit patterns, so a round trip is exact.

use std::fs;
use std::path::Path;

use super::tree::{DecisionTree, Node};
use super::{DetectorError, ForestConfig, RandomForest, TrainingMeta};

pub const MODEL_MAGIC: &[u8; 4] = b"GGRF";
pub const MODEL_FORMAT_VERSION: u32 = 1;

pub fn to_bytes(model: &RandomForest) -> Vec<u8> {
    let mut out = Vec::with_capacity(1024);
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_FORMAT_VERSION.to_be_bytes());
    out.extend_from_slice(&(model.config.n_trees as u32).to_be_bytes());
    out.extend_from_slice(&(model.config.max_depth as u32).to_be_bytes());
    out.extend_from_slice(&model.config.seed.to_be_bytes());
    out.extend_from_slice(&(model.config.features_per_split as u32).to_be_bytes());
    out.push(model.config.bootstrap as u8);
    out.extend_from_slice(&(model.config.min_samples_leaf as u32).to_be_bytes());
    out.extend_from_slice(&model.meta.n_train.to_be_bytes());
    out.extend_from_slice(&model.meta.trained_at.to_be_bytes());
    out.extend_from_slice(&(model.meta.feature_names.len() as u32).to_be_bytes());
    for name in &model.meta.feature_names {
        out.extend_from_slice(&(name.len() as u32).to_be_bytes());
        out.extend_from_slice(name.as_bytes());
    }
    for tree in &model.trees {
        out.extend_from_slice(&(tree.nodes.len() as u32).to_be_bytes());
        for node in &tree.nodes {
            match node {
                Node::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    out.push(0);
                    out.extend_from_slice(&(*feature as u32).to_be_bytes());
                    out.extend_from_slice(&threshold.to_bits().to_be_bytes());
                    out.extend_from_slice(&(*left as u32).to_be_bytes());
                    out.extend_from_slice(&(*right as u32).to_be_bytes());
                }
                Node::Leaf { prob } => {
                    out.push(1);
                    out.extend_from_slice(&prob.to_bits().to_be_bytes());
                }
            }
        }
    }
    out
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DetectorError> {
        if self.pos + n > self.data.len() {
            return Err(DetectorError::ModelFormat("truncated".into()));
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, DetectorError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, DetectorError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, DetectorError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, DetectorError> {
        Ok(f64::from_bits(self.u64()?))
    }
}

pub fn from_bytes(data: &[u8]) -> Result<RandomForest, DetectorError> {
    let mut r = Reader { data, pos: 0 };
    if r.take(4)? != MODEL_MAGIC {
        return Err(DetectorError::ModelFormat("bad magic".into()));
    }
    let version = r.u32()?;
    if version != MODEL_FORMAT_VERSION {
        return Err(DetectorError::ModelFormat(format!(
            "unsupported format version {version}"
        )));
    }
    let n_trees = r.u32()? as usize;
    let max_depth = r.u32()? as usize;
    let seed = r.u64()?;
    let features_per_split = r.u32()? as usize;
    let bootstrap = r.u8()? != 0;
    let min_samples_leaf = r.u32()? as usize;
    let n_train = r.u64()?;
    let trained_at = r.u32()?;
    let n_features = r.u32()? as usize;
    if n_features != 5 {
        return Err(DetectorError::ModelFormat(format!(
            "expected 5 features, file has {n_features}"
        )));
    }
    let mut feature_names = Vec::with_capacity(n_features);
    for _ in 0..n_features {
        let len = r.u32()? as usize;
        let raw = r.take(len)?;
        feature_names.push(
            String::from_utf8(raw.to_vec())
                .map_err(|_| DetectorError::ModelFormat("bad feature name".into()))?,
        );
    }
    let mut trees = Vec::with_capacity(n_trees);
    for _ in 0..n_trees {
        let node_count = r.u32()? as usize;
        let mut nodes = Vec::with_capacity(node_count);
        for _ in 0..node_count {
            let node = match r.u8()? {
                0 => {
                    let feature = r.u32()? as usize;
                    let threshold = r.f64()?;
                    let left = r.u32()? as usize;
                    let right = r.u32()? as usize;
                    if feature >= 5 || left >= node_count || right >= node_count {
                        return Err(DetectorError::ModelFormat("node out of range".into()));
                    }
                    Node::Internal {
                        feature,
                        threshold,
                        left,
                        right,
                    }
                }
                1 => Node::Leaf { prob: r.f64()? },
                tag => {
                    return Err(DetectorError::ModelFormat(format!("unknown node tag {tag}")))
                }
            };
            nodes.push(node);
        }
        trees.push(DecisionTree { nodes, max_depth });
    }
    if r.pos != data.len() {
        return Err(DetectorError::ModelFormat("trailing bytes".into()));
    }
    Ok(RandomForest {
        trees,
        config: ForestConfig {
            n_trees,
            max_depth,
            seed,
            features_per_split,
            bootstrap,
            min_samples_leaf,
        },
        meta: TrainingMeta {
            n_train,
            seed,
            trained_at,
            feature_names,
        },
    })
}

pub fn save_model(path: &Path, model: &RandomForest) -> Result<(), DetectorError> {
    fs::write(path, to_bytes(model))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<RandomForest, DetectorError> {
    from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_dataset, GeneratorConfig};
    use crate::detector::{fit_forest, Dataset};

    fn trained() -> RandomForest {
        let samples = generate_dataset(&GeneratorConfig {
            n_samples: 300,
            ..Default::default()
        })
        .unwrap();
        let data = Dataset::from_samples(&samples).unwrap();
        fit_forest(
            &data,
            ForestConfig {
                n_trees: 7,
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let model = trained();
        let bytes = to_bytes(&model);
        assert_eq!(&bytes[..4], MODEL_MAGIC);
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.model_id(), model.model_id());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ggrf");
        let model = trained();
        save_model(&path, &model).unwrap();
        assert_eq!(load_model(&path).unwrap(), model);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let model = trained();
        let bytes = to_bytes(&model);
        assert!(from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(from_bytes(&bad_magic).is_err());
        let mut trailing = bytes;
        trailing.push(0);
        assert!(from_bytes(&trailing).is_err());
    }
}
