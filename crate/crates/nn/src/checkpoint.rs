//! Versioned checkpoint container: a safetensors file of named `f32` tensors
//! whose metadata carries the format version and a JSON manifest.

use std::collections::HashMap;
use std::path::Path;

use safetensors::tensor::{Dtype, SafeTensors, TensorView};
use serde::{Deserialize, Serialize};

use crate::{ParamStore, Tensor};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

const KEY_VERSION: &str = "format_version";
const KEY_MANIFEST: &str = "manifest";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("unsupported checkpoint format version {found} (expected {expected})")]
    Version { found: String, expected: u32 },
    #[error("checkpoint is missing tensor `{0}`")]
    MissingTensor(String),
    #[error("checkpoint has unexpected tensor `{0}`")]
    UnexpectedTensor(String),
    #[error("tensor `{name}` has shape {found:?}, expected {expected:?}")]
    Shape {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("checkpoint holds a `{found}` model, expected `{expected}`")]
    Kind { found: String, expected: String },
}

/// Everything except the tensors themselves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    /// Model kind tag, e.g. `obfuscator` or `utility:detect`.
    pub kind: String,
    pub arch: serde_json::Value,
    pub seed: u64,
    /// Free-form record of how the weights were produced.
    pub provenance: serde_json::Value,
}

pub fn save_checkpoint(
    path: &Path,
    manifest: &CheckpointManifest,
    params: &ParamStore<f32>,
) -> Result<(), CheckpointError> {
    let bytes: Vec<Vec<u8>> = params
        .tensors()
        .iter()
        .map(|t| t.data().iter().flat_map(|v| v.to_le_bytes()).collect())
        .collect();
    let mut views = Vec::with_capacity(params.len());
    for ((name, t), b) in params.iter().zip(&bytes) {
        let view = TensorView::new(Dtype::F32, t.shape().to_vec(), b)
            .map_err(|e| CheckpointError::Format(e.to_string()))?;
        views.push((name.to_string(), view));
    }
    let mut meta = HashMap::new();
    meta.insert(KEY_VERSION.to_string(), CHECKPOINT_FORMAT_VERSION.to_string());
    meta.insert(
        KEY_MANIFEST.to_string(),
        serde_json::to_string(manifest).map_err(|e| CheckpointError::Format(e.to_string()))?,
    );
    let out = safetensors::serialize(views, Some(meta))
        .map_err(|e| CheckpointError::Format(e.to_string()))?;
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// A decoded checkpoint before it is matched against a model layout.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub tensors: HashMap<String, Tensor<f32>>,
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let buf = std::fs::read(path)?;
    let (_, meta) =
        SafeTensors::read_metadata(&buf).map_err(|e| CheckpointError::Format(e.to_string()))?;
    let info = meta
        .metadata()
        .clone()
        .ok_or_else(|| CheckpointError::Format("missing metadata".into()))?;
    let version = info
        .get(KEY_VERSION)
        .ok_or_else(|| CheckpointError::Format("missing format_version".into()))?;
    if version.parse::<u32>().ok() != Some(CHECKPOINT_FORMAT_VERSION) {
        return Err(CheckpointError::Version {
            found: version.clone(),
            expected: CHECKPOINT_FORMAT_VERSION,
        });
    }
    let manifest: CheckpointManifest = serde_json::from_str(
        info.get(KEY_MANIFEST)
            .ok_or_else(|| CheckpointError::Format("missing manifest".into()))?,
    )
    .map_err(|e| CheckpointError::Format(e.to_string()))?;
    let st = SafeTensors::deserialize(&buf).map_err(|e| CheckpointError::Format(e.to_string()))?;
    let mut tensors = HashMap::new();
    for (name, view) in st.iter() {
        if view.dtype() != Dtype::F32 {
            return Err(CheckpointError::Format(format!("tensor `{name}` is not f32")));
        }
        let data = view
            .data()
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.insert(name.to_string(), Tensor::from_vec(view.shape(), data));
    }
    Ok(Checkpoint { manifest, tensors })
}

impl Checkpoint {
    pub fn expect_kind(&self, kind: &str) -> Result<(), CheckpointError> {
        if self.manifest.kind != kind {
            return Err(CheckpointError::Kind {
                found: self.manifest.kind.clone(),
                expected: kind.to_string(),
            });
        }
        Ok(())
    }

    /// Copies tensors into a freshly built store with the expected layout.
    /// Every tensor in `layout` must be present with the same shape, and no
    /// extra tensors may appear.
    pub fn restore(mut self, layout: &ParamStore<f32>) -> Result<ParamStore<f32>, CheckpointError> {
        let mut names = Vec::with_capacity(layout.len());
        let mut tensors = Vec::with_capacity(layout.len());
        for (name, t) in layout.iter() {
            let got = self
                .tensors
                .remove(name)
                .ok_or_else(|| CheckpointError::MissingTensor(name.to_string()))?;
            if got.shape() != t.shape() {
                return Err(CheckpointError::Shape {
                    name: name.to_string(),
                    found: got.shape().to_vec(),
                    expected: t.shape().to_vec(),
                });
            }
            names.push(name.to_string());
            tensors.push(got);
        }
        if let Some(extra) = self.tensors.keys().min() {
            return Err(CheckpointError::UnexpectedTensor(extra.clone()));
        }
        Ok(ParamStore::from_parts(names, tensors))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore<f32> {
        let mut ps = ParamStore::new();
        ps.add("a.weight", Tensor::from_vec(&[2, 2], vec![1.0, -2.5, 3.25, f32::MIN_POSITIVE]));
        ps.add("a.bias", Tensor::from_vec(&[2], vec![0.1, 0.2]));
        ps
    }

    fn manifest() -> CheckpointManifest {
        CheckpointManifest {
            kind: "test".into(),
            arch: serde_json::json!({"width": 2}),
            seed: 7,
            provenance: serde_json::json!({"note": "unit"}),
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.safetensors");
        let ps = store();
        save_checkpoint(&path, &manifest(), &ps).unwrap();
        let ck = load_checkpoint(&path).unwrap();
        assert_eq!(ck.manifest, manifest());
        let back = ck.restore(&ps).unwrap();
        assert_eq!(back.hash_hex(), ps.hash_hex());
        assert_eq!(back, ps);
    }

    #[test]
    fn missing_tensor_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.safetensors");
        let mut small = ParamStore::new();
        small.add("a.weight", Tensor::from_vec(&[2, 2], vec![0.0; 4]));
        save_checkpoint(&path, &manifest(), &small).unwrap();
        let err = load_checkpoint(&path).unwrap().restore(&store()).unwrap_err();
        assert!(matches!(err, CheckpointError::MissingTensor(ref n) if n == "a.bias"), "{err}");
    }

    #[test]
    fn wrong_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.safetensors");
        let mut meta = HashMap::new();
        meta.insert(KEY_VERSION.to_string(), "99".to_string());
        meta.insert(KEY_MANIFEST.to_string(), serde_json::to_string(&manifest()).unwrap());
        let data = [0u8; 4];
        let view = TensorView::new(Dtype::F32, vec![1], &data).unwrap();
        let out = safetensors::serialize(vec![("x".to_string(), view)], Some(meta)).unwrap();
        std::fs::write(&path, out).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(matches!(err, CheckpointError::Version { .. }), "{err}");
    }
}
