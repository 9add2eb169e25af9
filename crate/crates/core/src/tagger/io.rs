//! Binary model files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "SEQLAB01"
//! u64 config length, config JSON
//! u32 tensor count
//! per tensor: u32 name length, name, u32 rank, u64 dims…, f64 values…
//! ```

use std::path::Path;

use super::{init_model, ModelBundle, ModelConfig, TaggerError, FORMAT_VERSION};
use crate::neural::Params;

pub const MAGIC: &[u8; 8] = b"SEQLAB01";

pub fn model_to_bytes(bundle: &ModelBundle) -> Vec<u8> {
    let config = serde_json::to_vec(&bundle.config).expect("config serializes");
    let tensors = bundle.params.tensors();
    let mut out = Vec::with_capacity(16 + config.len() + 8 * bundle.params.num_values());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(config.len() as u64).to_le_bytes());
    out.extend_from_slice(&config);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for d in &t.shape {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for v in &t.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], TaggerError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                TaggerError::Format(format!(
                    "truncated while reading {what} at byte {}",
                    self.pos
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, TaggerError> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self, what: &str) -> Result<u64, TaggerError> {
        Ok(u64::from_le_bytes(
            self.take(8, what)?.try_into().expect("8 bytes"),
        ))
    }

    fn len(&mut self, what: &str) -> Result<usize, TaggerError> {
        let n = self.u64(what)?;
        usize::try_from(n).map_err(|_| TaggerError::Format(format!("{what} {n} is too large")))
    }
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<ModelBundle, TaggerError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(TaggerError::Format("not a model file (bad magic)".into()));
    }
    let n = r.len("config length")?;
    let config: ModelConfig = serde_json::from_slice(r.take(n, "config")?)
        .map_err(|e| TaggerError::Format(format!("config: {e}")))?;
    let mut bundle = init_model(&config, config.seed)?;
    let count = r.u32("tensor count")? as usize;
    let mut tensors = bundle.params.tensors_mut();
    if count != tensors.len() {
        return Err(TaggerError::Format(format!(
            "file has {count} tensors, config implies {}",
            tensors.len()
        )));
    }
    for t in tensors.iter_mut() {
        let name_len = r.u32("tensor name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| TaggerError::Format("tensor name is not UTF-8".into()))?;
        if name != t.name {
            return Err(TaggerError::Format(format!(
                "expected tensor `{}`, found `{name}`",
                t.name
            )));
        }
        let rank = r.u32("tensor rank")? as usize;
        let shape = (0..rank)
            .map(|_| r.len("tensor dimension"))
            .collect::<Result<Vec<_>, _>>()?;
        if shape != t.shape {
            return Err(TaggerError::Format(format!(
                "tensor `{name}` has shape {shape:?}, expected {:?}",
                t.shape
            )));
        }
        let raw = r.take(8 * t.values.len(), "tensor values")?;
        for (v, chunk) in t.values.iter_mut().zip(raw.chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
    }
    if r.pos != bytes.len() {
        return Err(TaggerError::Format(format!(
            "{} trailing bytes after the last tensor",
            bytes.len() - r.pos
        )));
    }
    bundle.format_version = FORMAT_VERSION;
    Ok(bundle)
}

pub fn save_model(bundle: &ModelBundle, path: &Path) -> Result<(), TaggerError> {
    std::fs::write(path, model_to_bytes(bundle)).map_err(|source| TaggerError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_model(path: &Path) -> Result<ModelBundle, TaggerError> {
    let bytes = std::fs::read(path).map_err(|source| TaggerError::Io {
        path: path.display().to_string(),
        source,
    })?;
    model_from_bytes(&bytes)
}
