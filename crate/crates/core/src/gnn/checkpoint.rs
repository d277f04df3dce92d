//! Flat named-tensor checkpoints: little-endian f64 binary plus a JSON
//! manifest carrying names, shapes, and byte offsets.

use crate::error::{MhcError, Result};
use crate::gnn::params::ParamStore;
use crate::linalg::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::Path;

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    dtype: String,
    tensors: Vec<ManifestEntry>,
}

/// Write `<stem>.bin` and `<stem>.json`. Tensors are laid out in name-sorted
/// order for stable byte output.
pub fn save_checkpoint(store: &ParamStore, stem: &Path) -> Result<()> {
    let mut entries: Vec<_> = store.iter().collect();
    entries.sort_by(|a, b| a.name.cmp(&b.name));
    let mut manifest = Manifest { dtype: "f64-le".into(), tensors: Vec::new() };
    let mut bin = fs::File::create(stem.with_extension("bin"))?;
    let mut offset = 0usize;
    for e in entries {
        manifest.tensors.push(ManifestEntry {
            name: e.name.clone(),
            shape: e.tensor.shape().to_vec(),
            offset,
        });
        for v in e.tensor.data() {
            bin.write_all(&v.to_le_bytes())?;
        }
        offset += e.tensor.len() * 8;
    }
    bin.flush()?;
    fs::write(stem.with_extension("json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Load a checkpoint into an existing store; shapes must match.
pub fn load_checkpoint(store: &mut ParamStore, stem: &Path) -> Result<()> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(stem.with_extension("json"))?)?;
    if manifest.dtype != "f64-le" {
        return Err(MhcError::InvalidArgument(format!("unsupported dtype {}", manifest.dtype)));
    }
    let bin = fs::read(stem.with_extension("bin"))?;
    for entry in &manifest.tensors {
        let n: usize = entry.shape.iter().product();
        let end = entry.offset + n * 8;
        if end > bin.len() {
            return Err(MhcError::Dataset(format!("checkpoint truncated at tensor {}", entry.name)));
        }
        let data: Vec<f64> = bin[entry.offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        store.set(&entry.name, Tensor::new(entry.shape.clone(), data)?)?;
    }
    Ok(())
}
