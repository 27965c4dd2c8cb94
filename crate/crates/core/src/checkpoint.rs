//! Checkpoints: a JSON manifest plus one raw little-endian `f64` blob.
//!
//! The manifest lists every stored tensor with its shape, byte offset and
//! element count. Each parameter contributes three tensors (value and both
//! Adam moments); gradients are not stored because they are zero between
//! optimizer steps. Reloading is bitwise exact.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autograd::Parameter;
use crate::error::{Error, Result};
use crate::model::{ModelParams, ModelSpec};
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: usize,
    /// Number of `f64` elements.
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub seed: u64,
    pub spec: ModelSpec,
    pub epochs_completed: usize,
    pub best_val_loss: Option<f64>,
    /// Optimizer step count per parameter, canonical order.
    pub step_counts: Vec<u64>,
    /// Blob file name, relative to the manifest.
    pub blob: String,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub seed: u64,
    pub epochs_completed: usize,
    pub best_val_loss: Option<f64>,
}

fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

/// Writes `<path>` (manifest) and `<path>.bin` (blob, same stem).
pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let blob = blob_path(path);
    let names = ckpt.params.spec.parameter_shapes();
    let params = ckpt.params.parameters();

    let mut bytes = Vec::new();
    let mut tensors = Vec::with_capacity(params.len() * 3);
    for ((name, _), p) in names.iter().zip(&params) {
        for (suffix, t) in [("", &p.value), (".adam_m", &p.adam_m), (".adam_v", &p.adam_v)] {
            tensors.push(TensorEntry {
                name: format!("{name}{suffix}"),
                shape: t.shape().to_vec(),
                offset: bytes.len(),
                len: t.len(),
            });
            for v in t.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let manifest = CheckpointManifest {
        format_version: FORMAT_VERSION,
        seed: ckpt.seed,
        spec: ckpt.params.spec.clone(),
        epochs_completed: ckpt.epochs_completed,
        best_val_loss: ckpt.best_val_loss,
        step_counts: params.iter().map(|p| p.step_count).collect(),
        blob: blob
            .file_name()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Checkpoint(format!("bad checkpoint path {}", path.display())))?
            .to_string(),
        tensors,
    };
    std::fs::write(&blob, &bytes).map_err(|e| Error::io(&blob, e))?;
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: CheckpointManifest =
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {}",
            manifest.format_version
        )));
    }
    manifest.spec.validate()?;
    let blob_file = path.with_file_name(&manifest.blob);
    let bytes = std::fs::read(&blob_file).map_err(|e| Error::io(&blob_file, e))?;

    let shapes = manifest.spec.parameter_shapes();
    if manifest.tensors.len() != shapes.len() * 3 || manifest.step_counts.len() != shapes.len() {
        return Err(Error::Checkpoint(format!(
            "manifest lists {} tensors, spec needs {}",
            manifest.tensors.len(),
            shapes.len() * 3
        )));
    }
    let read = |entry: &TensorEntry, shape: &[usize]| -> Result<Tensor> {
        if entry.shape != shape || entry.len != shape.iter().product::<usize>() {
            return Err(Error::ShapeMismatch {
                op: "load checkpoint",
                left: entry.shape.clone(),
                right: shape.to_vec(),
            });
        }
        let end = entry.offset + entry.len * 8;
        let raw = bytes.get(entry.offset..end).ok_or_else(|| {
            Error::Checkpoint(format!("tensor {} runs past end of blob", entry.name))
        })?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Tensor::new(shape.to_vec(), data)
    };

    let mut params = Vec::with_capacity(shapes.len());
    for (i, (name, shape)) in shapes.iter().enumerate() {
        let entries = &manifest.tensors[i * 3..i * 3 + 3];
        if entries[0].name != *name {
            return Err(Error::Checkpoint(format!(
                "expected tensor {name}, found {}",
                entries[0].name
            )));
        }
        let mut p = Parameter::new(read(&entries[0], shape)?);
        p.adam_m = read(&entries[1], shape)?;
        p.adam_v = read(&entries[2], shape)?;
        p.step_count = manifest.step_counts[i];
        params.push(p);
    }

    let spec = manifest.spec;
    let n_conv = spec.conv_channels.len();
    let mut iter = params.into_iter();
    let conv_weights: Vec<Parameter> = iter.by_ref().take(n_conv).collect();
    let mut fc_weights = Vec::new();
    let mut fc_biases = Vec::new();
    while let (Some(w), Some(b)) = (iter.next(), iter.next()) {
        fc_weights.push(w);
        fc_biases.push(b);
    }
    Ok(Checkpoint {
        params: ModelParams {
            spec,
            conv_weights,
            fc_weights,
            fc_biases,
        },
        seed: manifest.seed,
        epochs_completed: manifest.epochs_completed,
        best_val_loss: manifest.best_val_loss,
    })
}

/// Loads a checkpoint and insists that it was saved for `expected`.
pub fn load_checkpoint_for(path: impl AsRef<Path>, expected: &ModelSpec) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    if ckpt.params.spec != *expected {
        let shapes = |s: &ModelSpec| {
            s.parameter_shapes()
                .into_iter()
                .flat_map(|(_, sh)| sh)
                .collect::<Vec<_>>()
        };
        return Err(Error::ShapeMismatch {
            op: "checkpoint vs model spec",
            left: shapes(&ckpt.params.spec),
            right: shapes(expected),
        });
    }
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelName, Scale};

    #[test]
    fn roundtrip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let spec = ModelSpec::gcn(vec![3, 4], vec![5], 6);
        let mut params = ModelParams::init(&spec, 9).unwrap();
        params.conv_weights[0].adam_m.data_mut()[0] = 1.0 / 3.0;
        params.fc_biases[1].step_count = 17;
        let ckpt = Checkpoint {
            params,
            seed: 9,
            epochs_completed: 4,
            best_val_loss: Some(0.1 + 0.2),
        };
        let path = dir.path().join("ckpt.json");
        save_checkpoint(&path, &ckpt).unwrap();
        assert!(dir.path().join("ckpt.bin").exists());
        assert_eq!(load_checkpoint(&path).unwrap(), ckpt);
    }

    #[test]
    fn spec_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let spec_i = ModelSpec::for_model(ModelName::I, Scale::Desk, 6);
        let spec_iv = ModelSpec::for_model(ModelName::IV, Scale::Desk, 6);
        let ckpt = Checkpoint {
            params: ModelParams::init(&spec_i, 0).unwrap(),
            seed: 0,
            epochs_completed: 0,
            best_val_loss: None,
        };
        let path = dir.path().join("m1.json");
        save_checkpoint(&path, &ckpt).unwrap();
        let err = load_checkpoint_for(&path, &spec_iv).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }));
    }

    #[test]
    fn truncated_blob_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let spec = ModelSpec::mlp(vec![4], 2);
        let ckpt = Checkpoint {
            params: ModelParams::init(&spec, 0).unwrap(),
            seed: 0,
            epochs_completed: 0,
            best_val_loss: None,
        };
        let path = dir.path().join("c.json");
        save_checkpoint(&path, &ckpt).unwrap();
        let blob = dir.path().join("c.bin");
        let bytes = std::fs::read(&blob).unwrap();
        std::fs::write(&blob, &bytes[..bytes.len() - 8]).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
