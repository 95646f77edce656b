use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NetError, ParamStore};
use crate::tensorkit::Tensor;

const MANIFEST: &str = "manifest.json";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    file: String,
    shape: Vec<usize>,
    trainable: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    tensors: Vec<TensorRecord>,
    meta: serde_json::Value,
}

/// Parameters plus free-form metadata (topology, constraint files, box flag,
/// optimizer state, config echo).
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub store: ParamStore,
    pub meta: serde_json::Value,
}

fn file_name(name: &str) -> Result<String, NetError> {
    if name.is_empty()
        || name.starts_with('.')
        || !name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'))
    {
        return Err(NetError::CheckpointCorrupt(format!("unsupported tensor name {name:?}")));
    }
    Ok(format!("{name}.bin"))
}

/// Writes `dir/manifest.json` and one raw little-endian f64 file per tensor.
pub fn save_checkpoint(dir: impl AsRef<Path>, store: &ParamStore, meta: &serde_json::Value) -> Result<(), NetError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut tensors = Vec::with_capacity(store.len());
    for e in store.entries() {
        let file = file_name(&e.name)?;
        let bytes: Vec<u8> = e.tensor.data().iter().flat_map(|x| x.to_le_bytes()).collect();
        fs::write(dir.join(&file), bytes)?;
        tensors.push(TensorRecord {
            name: e.name.clone(),
            file,
            shape: e.tensor.shape().to_vec(),
            trainable: e.trainable,
        });
    }
    let manifest = Manifest {
        version: VERSION,
        tensors,
        meta: meta.clone(),
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| NetError::CheckpointCorrupt(e.to_string()))?;
    fs::write(dir.join(MANIFEST), text)?;
    Ok(())
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Checkpoint, NetError> {
    let dir = dir.as_ref();
    let text = fs::read_to_string(dir.join(MANIFEST))
        .map_err(|e| NetError::CheckpointCorrupt(format!("{}: {e}", dir.join(MANIFEST).display())))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| NetError::CheckpointCorrupt(format!("manifest: {e}")))?;
    if manifest.version != VERSION {
        return Err(NetError::CheckpointCorrupt(format!(
            "unsupported version {}",
            manifest.version
        )));
    }
    let mut store = ParamStore::new();
    for rec in manifest.tensors {
        if file_name(&rec.name)? != rec.file {
            return Err(NetError::CheckpointCorrupt(format!("unexpected file name {}", rec.file)));
        }
        if store.find(&rec.name).is_some() {
            return Err(NetError::CheckpointCorrupt(format!("duplicate tensor {}", rec.name)));
        }
        let bytes = fs::read(dir.join(&rec.file))
            .map_err(|e| NetError::CheckpointCorrupt(format!("{}: {e}", rec.file)))?;
        let numel: usize = rec.shape.iter().product();
        if bytes.len() != numel * 8 {
            return Err(NetError::CheckpointCorrupt(format!(
                "{} holds {} bytes, expected {}",
                rec.file,
                bytes.len(),
                numel * 8
            )));
        }
        let data: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let tensor = Tensor::new(rec.shape, data)?;
        store.add(rec.name, tensor, rec.trainable);
    }
    Ok(Checkpoint {
        store,
        meta: manifest.meta,
    })
}
