//! Weight checkpoints: a JSON manifest listing every parameter tensor plus a
//! flat little-endian `f32` payload holding them back to back in layout order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{layout, ModelConfig, ModelWeights};
use crate::error::{Error, Result};
use crate::raster::DTYPE;
use crate::tensor::DiffTensor;

pub const CHECKPOINT_FORMAT: &str = "lpnn-weights";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct LayerEntry {
    name: String,
    shape: [usize; 4],
    /// Offset in elements into the payload.
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    seed: u64,
    model: ModelConfig,
    dtype: String,
    payload: String,
    parameter_count: usize,
    layers: Vec<LayerEntry>,
}

fn malformed(path: &Path, reason: impl Into<String>) -> Error {
    Error::MalformedHeader {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Writes `<path>` and `<stem>.bin`. Values are rounded to `f32`.
pub fn save_checkpoint(w: &ModelWeights, path: &Path) -> Result<()> {
    let stem = path
        .file_stem()
        .ok_or_else(|| Error::contract(format!("{} has no file name", path.display())))?;
    let payload = format!("{}.bin", stem.to_string_lossy());
    let mut layers = Vec::new();
    let mut bytes = Vec::with_capacity(w.parameter_count() * 4);
    let mut offset = 0;
    for (spec, p) in w.layout().iter().zip(w.params()) {
        layers.push(LayerEntry {
            name: spec.name.clone(),
            shape: spec.shape,
            offset,
        });
        offset += p.len();
        for &v in p.values() {
            let f = v as f32;
            if !f.is_finite() {
                return Err(Error::NumericFailure(format!("{}: weight {v} does not fit in f32", spec.name)));
            }
            bytes.extend_from_slice(&f.to_le_bytes());
        }
    }
    let manifest = Manifest {
        format: CHECKPOINT_FORMAT.into(),
        version: VERSION,
        seed: w.seed,
        model: w.config.clone(),
        dtype: DTYPE.into(),
        payload: payload.clone(),
        parameter_count: offset,
        layers,
    };
    let bin = path.with_file_name(&payload);
    std::fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))?;
    std::fs::write(path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelWeights> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| malformed(path, e.to_string()))?;
    if m.format != CHECKPOINT_FORMAT || m.version != VERSION {
        return Err(malformed(path, format!("unsupported checkpoint {} v{}", m.format, m.version)));
    }
    if m.dtype != DTYPE {
        return Err(malformed(path, format!("unsupported dtype '{}'", m.dtype)));
    }
    m.model.validate().map_err(|e| malformed(path, e.to_string()))?;
    let specs = layout(&m.model);
    if specs.len() != m.layers.len() {
        return Err(malformed(path, format!("{} layers listed, architecture has {}", m.layers.len(), specs.len())));
    }
    let mut expected_offset = 0;
    for (s, l) in specs.iter().zip(&m.layers) {
        if s.name != l.name || s.shape != l.shape || l.offset != expected_offset {
            return Err(malformed(path, format!("layer '{}' does not match the architecture", l.name)));
        }
        expected_offset += s.shape.iter().product::<usize>();
    }
    if expected_offset != m.parameter_count {
        return Err(malformed(path, "parameter_count disagrees with the layer list"));
    }
    let bin = path.with_file_name(&m.payload);
    let bytes = std::fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    let expected = 4 * m.parameter_count;
    if bytes.len() < expected {
        return Err(Error::TruncatedPayload {
            path: bin,
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(malformed(path, format!("payload holds {} bytes, expected {expected}", bytes.len())));
    }
    let mut values = Vec::with_capacity(m.parameter_count);
    for (index, c) in bytes.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
        if !v.is_finite() {
            return Err(Error::NonFinite { path: bin, index });
        }
        values.push(f64::from(v));
    }
    let params = specs
        .iter()
        .zip(&m.layers)
        .map(|(s, l)| DiffTensor::new(s.shape, values[l.offset..l.offset + s.shape.iter().product::<usize>()].to_vec()))
        .collect::<Result<Vec<_>>>()?;
    ModelWeights::from_params(m.model, m.seed, params)
}
