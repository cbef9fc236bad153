//! Binary checkpoint: little-endian header, the model configuration as
//! JSON, then every parameter as a 32-bit float in declaration order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{architecture_hash, ModelConfig, VelocityModel};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"AFEMODEL";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint(model: &VelocityModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let config = serde_json::to_vec(&model.config)?;
    let n = model.params.n_scalars();
    let mut buf = Vec::with_capacity(64 + config.len() + 4 * n);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&architecture_hash(&model.config));
    buf.extend_from_slice(&(n as u64).to_le_bytes());
    buf.extend_from_slice(&(config.len() as u32).to_le_bytes());
    buf.extend_from_slice(&config);
    for v in model.params.flat() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    // Write to a sibling file first so a crash never leaves a torn checkpoint.
    let tmp = path.with_extension("tmp");
    fs::File::create(&tmp)
        .and_then(|mut f| f.write_all(&buf).and_then(|_| f.sync_all()))
        .map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn take<'a>(buf: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if buf.len() < n {
        return Err(Error::Format("checkpoint truncated".into()));
    }
    let (head, rest) = buf.split_at(n);
    *buf = rest;
    Ok(head)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<VelocityModel> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let mut buf = bytes.as_slice();
    if take(&mut buf, 8)? != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("{} is not a model checkpoint", path.display())));
    }
    let version = u32::from_le_bytes(take(&mut buf, 4)?.try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::IncompatibleCheckpoint(format!("format version {version}, expected {CHECKPOINT_VERSION}")));
    }
    let hash: [u8; 32] = take(&mut buf, 32)?.try_into().expect("32 bytes");
    let count = u64::from_le_bytes(take(&mut buf, 8)?.try_into().expect("8 bytes")) as usize;
    let cfg_len = u32::from_le_bytes(take(&mut buf, 4)?.try_into().expect("4 bytes")) as usize;
    let config: ModelConfig = serde_json::from_slice(take(&mut buf, cfg_len)?)?;
    if architecture_hash(&config) != hash {
        return Err(Error::IncompatibleCheckpoint("architecture hash does not match the stored configuration".into()));
    }
    let mut model = VelocityModel::new(config, 0)?;
    if model.params.n_scalars() != count || buf.len() != 4 * count {
        return Err(Error::IncompatibleCheckpoint(format!(
            "expected {} parameters, header says {count} with {} payload bytes",
            model.params.n_scalars(),
            buf.len()
        )));
    }
    for (dst, chunk) in model.params.flat_mut().zip(buf.chunks_exact(4)) {
        *dst = f32::from_le_bytes(chunk.try_into().expect("4 bytes")) as f64;
    }
    Ok(model)
}

/// Load and require the architecture of `expected`.
pub fn load_checkpoint_expecting(path: impl AsRef<Path>, expected: &ModelConfig) -> Result<VelocityModel> {
    let model = load_checkpoint(path)?;
    if architecture_hash(&model.config) != architecture_hash(expected) {
        return Err(Error::IncompatibleCheckpoint(
            "checkpoint architecture differs from the configured model".into(),
        ));
    }
    Ok(model)
}
