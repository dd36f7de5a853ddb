//! Checkpoint directories: `manifest.json` (config, step, tensor names,
//! shapes and offsets) next to `weights.bin`, a raw little-endian f32 blob.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{TrainConfig, TransformerConfig};
use super::transformer::{Tensor, Transformer};
use super::ModelError;

pub const CHECKPOINT_FORMAT: &str = "thairom-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_FILE: &str = "weights.bin";

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TransformerConfig,
    pub train_config: Option<TrainConfig>,
    pub step: u64,
    /// Validation CER of this checkpoint, when it was evaluated.
    pub best_metric: Option<f64>,
    pub tensors: Vec<CheckpointTensor>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    length: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    dtype: String,
    config: TransformerConfig,
    train_config: Option<TrainConfig>,
    step: u64,
    best_metric: Option<f64>,
    blob: String,
    blob_bytes: usize,
    tensors: Vec<TensorEntry>,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> ModelError + '_ {
    move |source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl Checkpoint {
    /// Snapshot of a model; weights are stored as f32.
    pub fn from_model(model: &Transformer, train_config: Option<&TrainConfig>, step: u64, best_metric: Option<f64>) -> Self {
        Checkpoint {
            config: model.config().clone(),
            train_config: train_config.cloned(),
            step,
            best_metric,
            tensors: model
                .params()
                .iter()
                .map(|t| CheckpointTensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|&v| v as f32).collect(),
                })
                .collect(),
        }
    }

    pub fn to_model(&self) -> Result<Transformer, ModelError> {
        let tensors = self
            .tensors
            .iter()
            .map(|t| Tensor {
                name: t.name.clone(),
                shape: t.shape.clone(),
                data: t.data.iter().map(|&v| v as f64).collect(),
            })
            .collect();
        Transformer::from_tensors(&self.config, tensors)
    }

    fn check(&self) -> Result<(), ModelError> {
        for t in &self.tensors {
            if t.data.len() != t.shape.iter().product::<usize>() {
                return Err(ModelError::Shape(format!(
                    "tensor {}: {} values for shape {:?}",
                    t.name,
                    t.data.len(),
                    t.shape
                )));
            }
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::NonFinite(format!("tensor {}", t.name)));
            }
        }
        // names and shapes against the architecture
        self.to_model().map(|_| ())
    }

    pub fn save(&self, dir: &Path) -> Result<(), ModelError> {
        self.check()?;
        fs::create_dir_all(dir).map_err(io(dir))?;
        let mut blob = Vec::new();
        let mut entries = Vec::with_capacity(self.tensors.len());
        for t in &self.tensors {
            entries.push(TensorEntry {
                name: t.name.clone(),
                shape: t.shape.clone(),
                offset: blob.len(),
                length: t.data.len() * 4,
            });
            for v in &t.data {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let manifest = Manifest {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            dtype: "f32le".into(),
            config: self.config.clone(),
            train_config: self.train_config.clone(),
            step: self.step,
            best_metric: self.best_metric,
            blob: BLOB_FILE.into(),
            blob_bytes: blob.len(),
            tensors: entries,
        };
        let value = serde_json::to_value(&manifest).map_err(|e| ModelError::Format(e.to_string()))?;
        let blob_path = dir.join(BLOB_FILE);
        fs::write(&blob_path, &blob).map_err(io(&blob_path))?;
        let manifest_path = dir.join(MANIFEST_FILE);
        fs::write(&manifest_path, crate::report::to_stable_string(&value)).map_err(io(&manifest_path))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, ModelError> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&manifest_path).map_err(io(&manifest_path))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| ModelError::Format(format!("{}: {e}", manifest_path.display())))?;
        if m.format != CHECKPOINT_FORMAT {
            return Err(ModelError::Format(format!("not a checkpoint manifest: format {:?}", m.format)));
        }
        if m.version != CHECKPOINT_VERSION {
            return Err(ModelError::Format(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                m.version
            )));
        }
        if m.dtype != "f32le" {
            return Err(ModelError::Format(format!("unsupported dtype {:?}", m.dtype)));
        }
        let blob_path = dir.join(&m.blob);
        let blob = fs::read(&blob_path).map_err(io(&blob_path))?;
        if blob.len() != m.blob_bytes {
            return Err(ModelError::Format(format!(
                "weights blob has {} bytes, manifest says {}",
                blob.len(),
                m.blob_bytes
            )));
        }
        let mut tensors = Vec::with_capacity(m.tensors.len());
        for e in m.tensors {
            let n: usize = e.shape.iter().product();
            if e.length != n * 4 {
                return Err(ModelError::Shape(format!(
                    "tensor {}: shape {:?} needs {} bytes, manifest lists {}",
                    e.name,
                    e.shape,
                    n * 4,
                    e.length
                )));
            }
            let bytes = blob
                .get(e.offset..e.offset + e.length)
                .ok_or_else(|| ModelError::Format(format!("tensor {} lies outside the weights blob", e.name)))?;
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push(CheckpointTensor {
                name: e.name,
                shape: e.shape,
                data,
            });
        }
        let ck = Checkpoint {
            config: m.config,
            train_config: m.train_config,
            step: m.step,
            best_metric: m.best_metric,
            tensors,
        };
        ck.check()?;
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let m = Transformer::new(&TransformerConfig::tiny(), 5).unwrap();
        Checkpoint::from_model(&m, Some(&TrainConfig::default()), 17, Some(0.25))
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let ck = sample();
        ck.save(dir.path()).unwrap();
        let back = Checkpoint::load(dir.path()).unwrap();
        assert_eq!(back.step, 17);
        assert_eq!(back.best_metric, Some(0.25));
        for (a, b) in ck.tensors.iter().zip(&back.tensors) {
            assert_eq!(a.name, b.name);
            assert!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        // saving the reloaded checkpoint gives the same bytes
        let dir2 = tempfile::tempdir().unwrap();
        back.save(dir2.path()).unwrap();
        for f in [MANIFEST_FILE, BLOB_FILE] {
            assert_eq!(fs::read(dir.path().join(f)).unwrap(), fs::read(dir2.path().join(f)).unwrap());
        }
    }

    #[test]
    fn truncated_blob() {
        let dir = tempfile::tempdir().unwrap();
        sample().save(dir.path()).unwrap();
        let p = dir.path().join(BLOB_FILE);
        let mut b = fs::read(&p).unwrap();
        b.truncate(b.len() - 8);
        fs::write(&p, b).unwrap();
        let err = Checkpoint::load(dir.path()).unwrap_err().to_string();
        assert!(err.contains("bytes"), "{err}");
    }

    #[test]
    fn edited_shape_names_the_tensor() {
        let dir = tempfile::tempdir().unwrap();
        sample().save(dir.path()).unwrap();
        let p = dir.path().join(MANIFEST_FILE);
        let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&p).unwrap()).unwrap();
        v["tensors"][1]["shape"] = serde_json::json!([3, 3]);
        fs::write(&p, v.to_string()).unwrap();
        let err = Checkpoint::load(dir.path()).unwrap_err();
        assert!(matches!(&err, ModelError::Shape(m) if m.contains("encoder.relative_bias")), "{err}");
    }

    #[test]
    fn wrong_version() {
        let dir = tempfile::tempdir().unwrap();
        sample().save(dir.path()).unwrap();
        let p = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&p).unwrap().replace("\"version\": 1", "\"version\": 7");
        fs::write(&p, text).unwrap();
        assert!(Checkpoint::load(dir.path()).unwrap_err().to_string().contains("version 7"));
    }
}
