//! Feature dumps: JSON, or a flat little-endian binary with a
//! `{channels, frames, l_max}` u32 header followed by row-major f32 values.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::AcousticFeatures;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDump {
    pub channels: usize,
    pub frames: usize,
    pub l_max: usize,
    pub data: Vec<Vec<f64>>,
}

impl From<&AcousticFeatures> for FeatureDump {
    fn from(f: &AcousticFeatures) -> Self {
        Self {
            channels: f.channels.nrows(),
            frames: f.channels.ncols(),
            l_max: f.l_max,
            data: f.channels.outer_iter().map(|r| r.to_vec()).collect(),
        }
    }
}

pub fn write_features_json(path: impl AsRef<Path>, f: &AcousticFeatures) -> Result<()> {
    let path = path.as_ref();
    let bytes = serde_json::to_vec(&FeatureDump::from(f))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_features_bin(path: impl AsRef<Path>, f: &AcousticFeatures) -> Result<()> {
    let path = path.as_ref();
    let (c, t) = f.channels.dim();
    let mut bytes = Vec::with_capacity(12 + 4 * c * t);
    for v in [c as u32, t as u32, f.l_max as u32] {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    for &v in f.channels.iter() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_features_bin(path: impl AsRef<Path>) -> Result<AcousticFeatures> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let word = |i: usize| -> Result<u32> {
        bytes
            .get(4 * i..4 * i + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| Error::invalid("truncated feature header"))
    };
    let (c, t, l_max) = (word(0)? as usize, word(1)? as usize, word(2)? as usize);
    if bytes.len() != 12 + 4 * c * t {
        return Err(Error::invalid("feature payload length mismatch"));
    }
    let values = bytes[12..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    let channels = Array2::from_shape_vec((c, t), values).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(AcousticFeatures { channels, l_max })
}
