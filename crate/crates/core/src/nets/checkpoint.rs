//! Self-describing safetensors checkpoints.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device};

use super::{ArchitectureSpec, ComponentBundle};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "adaptimpute-bundle-1";

fn ckpt_err(e: impl std::fmt::Display) -> Error {
    Error::Checkpoint(e.to_string())
}

/// Writes every persistent tensor plus the architecture and seed as metadata.
pub fn save_checkpoint(bundle: &ComponentBundle, seed: u64, path: &Path) -> Result<()> {
    let mut metadata = HashMap::new();
    metadata.insert("format".to_string(), CHECKPOINT_FORMAT.to_string());
    metadata.insert("architecture".to_string(), serde_json::to_string(&bundle.spec)?);
    metadata.insert("seed".to_string(), seed.to_string());
    metadata.insert("dtype".to_string(), format!("{:?}", bundle.dtype()).to_lowercase());
    let state = bundle.named_state();
    let tensors: Vec<(String, candle_core::Tensor)> = state
        .iter()
        .map(|(n, v)| (n.clone(), v.as_tensor().contiguous()))
        .map(|(n, t)| t.map(|t| (n, t)))
        .collect::<candle_core::Result<_>>()?;
    safetensors::serialize_to_file(tensors.iter().map(|(n, t)| (n.as_str(), t)), Some(metadata), path)
        .map_err(ckpt_err)
}

/// Rebuilds a bundle from a checkpoint alone; returns it with its run seed.
pub fn load_checkpoint(path: &Path, device: &Device) -> Result<(ComponentBundle, u64)> {
    let buffer = std::fs::read(path)?;
    let (_, header) = safetensors::SafeTensors::read_metadata(&buffer).map_err(ckpt_err)?;
    let meta = header
        .metadata()
        .as_ref()
        .ok_or_else(|| Error::Checkpoint("missing metadata".into()))?;
    if meta.get("format").map(String::as_str) != Some(CHECKPOINT_FORMAT) {
        return Err(Error::Checkpoint(format!("unknown format {:?}", meta.get("format"))));
    }
    let spec: ArchitectureSpec = serde_json::from_str(
        meta.get("architecture")
            .ok_or_else(|| Error::Checkpoint("missing architecture".into()))?,
    )?;
    let seed: u64 = meta
        .get("seed")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Checkpoint("missing seed".into()))?;
    let dtype = match meta.get("dtype").map(String::as_str) {
        Some("f64") => DType::F64,
        _ => DType::F32,
    };
    let tensors = candle_core::safetensors::load_buffer(&buffer, device)?;
    let bundle = ComponentBundle::new(spec, seed, dtype, device)?;
    let state = bundle.named_state();
    if state.len() != tensors.len() {
        return Err(Error::Checkpoint(format!(
            "{} tensors in file, {} expected",
            tensors.len(),
            state.len()
        )));
    }
    for (name, var) in state {
        let t = tensors
            .get(&name)
            .ok_or_else(|| Error::Checkpoint(format!("tensor `{name}` missing")))?;
        if t.dims() != var.as_tensor().dims() {
            return Err(Error::Checkpoint(format!("tensor `{name}` has shape {:?}", t.dims())));
        }
        var.set(&t.to_dtype(dtype)?)?;
    }
    Ok((bundle, seed))
}
