//! JSON container for backbone weights.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Backbone, BackboneConfig};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "superpos-backbone";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    config: BackboneConfig,
    parameter_count: usize,
    /// Hex form of the 64-bit content hash.
    weights_hash: String,
    dropout_enabled: bool,
    tensors: Vec<NamedTensor>,
}

pub fn save_checkpoint(backbone: &Backbone, path: &Path) -> Result<()> {
    let tensors = backbone
        .weights()
        .named_tensors()
        .into_iter()
        .map(|(name, t)| NamedTensor {
            name,
            shape: t.shape().to_vec(),
            data: t.data().to_vec(),
        })
        .collect();
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        config: backbone.config().clone(),
        parameter_count: backbone.weights().parameter_count(),
        weights_hash: format!("{:016x}", backbone.weights_hash()),
        dropout_enabled: backbone.dropout_enabled(),
        tensors,
    };
    let json = serde_json::to_string(&file)?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

/// Loads and verifies format, tensor layout, parameter totals and hash.
pub fn load_checkpoint(path: &Path) -> Result<Backbone> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: CheckpointFile = serde_json::from_str(&text)?;
    if file.format != CHECKPOINT_FORMAT || file.version != CHECKPOINT_VERSION {
        return Err(Error::Integrity(format!(
            "unsupported checkpoint {} v{}",
            file.format, file.version
        )));
    }
    file.config.validate()?;
    let expected = file.config.parameter_count();
    if file.parameter_count != expected {
        return Err(Error::Integrity(format!(
            "stored parameter count {} but config implies {expected}",
            file.parameter_count
        )));
    }
    let mut weights = super::init_weights(&file.config, &mut rand::SeedableRng::seed_from_u64(0), true);
    {
        let mut slots = weights.named_tensors_mut();
        if slots.len() != file.tensors.len() {
            return Err(Error::Integrity(format!(
                "expected {} tensors, found {}",
                slots.len(),
                file.tensors.len()
            )));
        }
        for ((name, slot), stored) in slots.iter_mut().zip(file.tensors) {
            if *name != stored.name || slot.shape() != stored.shape.as_slice() {
                return Err(Error::Integrity(format!(
                    "tensor {} {:?} does not match expected {name} {:?}",
                    stored.name,
                    stored.shape,
                    slot.shape()
                )));
            }
            **slot = Tensor::new(stored.shape, stored.data)?;
        }
    }
    weights.check_shapes(&file.config)?;
    let total = weights.parameter_count();
    if total != file.parameter_count {
        return Err(Error::Integrity(format!(
            "loaded {total} parameters, header says {}",
            file.parameter_count
        )));
    }
    let hash = format!("{:016x}", weights.content_hash());
    if hash != file.weights_hash {
        return Err(Error::Integrity(format!(
            "weights hash {hash} does not match stored {}",
            file.weights_hash
        )));
    }
    Ok(Backbone::from_parts(file.config, weights, file.dropout_enabled))
}

/// Parameter total of a checkpoint, read from its header after verification.
pub fn checkpoint_parameter_count(path: &Path) -> Result<usize> {
    Ok(load_checkpoint(path)?.weights().parameter_count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::init_backbone;

    fn small() -> Backbone {
        init_backbone(BackboneConfig {
            vocab_size: 64,
            model_dim: 8,
            num_heads: 2,
            ffn_dim: 16,
            max_seq_len: 16,
            ..BackboneConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn roundtrip_is_exact() {
        let b = small();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bb.json");
        save_checkpoint(&b, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.weights_hash(), b.weights_hash());
        assert_eq!(back.weights().to_bytes(), b.weights().to_bytes());
        assert_eq!(checkpoint_parameter_count(&path).unwrap(), b.config().parameter_count());
    }

    #[test]
    fn tampering_is_detected() {
        let b = small();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bb.json");
        save_checkpoint(&b, &path).unwrap();
        let mut json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        json["tensors"][0]["data"][0] = serde_json::json!(1.5);
        std::fs::write(&path, json.to_string()).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Integrity(_))));

        json["parameter_count"] = serde_json::json!(7);
        std::fs::write(&path, json.to_string()).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Integrity(_))));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_checkpoint(Path::new("/nonexistent/bb.json")),
            Err(Error::Io { .. })
        ));
    }
}
