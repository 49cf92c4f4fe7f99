//! Model checkpoint container.
//!
//! Layout: the 8-byte magic `WSSLCKPT`, a little-endian `u32` format version,
//! a little-endian `u64` header length, the UTF-8 JSON header, then every
//! parameter as little-endian `f32` in header order. The header lists each
//! array's name, shape and element offset, plus training metadata.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::nn::{HasParams, Real};
use crate::preprocess::RoiSpec;
use crate::text::TextMatrices;
use crate::util::sha256_hex;

pub const MAGIC: &[u8; 8] = b"WSSLCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in elements from the start of the data block.
    pub offset: usize,
}

/// Frozen text matrices stored with a checkpoint so inference does not need
/// the embedding table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextBuffers {
    pub dim: usize,
    pub e_det: Vec<f64>,
    pub e_loc: Vec<f64>,
}

impl From<&TextMatrices> for TextBuffers {
    fn from(m: &TextMatrices) -> Self {
        TextBuffers {
            dim: m.dim,
            e_det: m.e_det.clone(),
            e_loc: m.e_loc.clone(),
        }
    }
}

impl TextBuffers {
    pub fn matrices(&self) -> TextMatrices {
        TextMatrices {
            dim: self.dim,
            e_det: self.e_det.clone(),
            e_loc: self.e_loc.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub stage: String,
    pub epoch: usize,
    pub config_hash: String,
    /// Model-selection metric at the saved epoch.
    pub metric: Option<f64>,
    pub model: ModelConfig,
    /// Cropping used to build the model input.
    #[serde(default)]
    pub roi: RoiSpec,
    pub text: Option<TextBuffers>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    arrays: Vec<ArrayEntry>,
    meta: CheckpointMeta,
}

pub fn to_bytes<T: Real>(model: &Model<T>, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    let mut arrays = Vec::new();
    let mut data: Vec<u8> = Vec::new();
    let mut offset = 0;
    model.visit(&mut |p| {
        arrays.push(ArrayEntry {
            name: p.name.clone(),
            shape: p.shape.clone(),
            offset,
        });
        offset += p.len();
        for v in &p.value {
            data.extend_from_slice(&(v.f64() as f32).to_le_bytes());
        }
    });
    let header = serde_json::to_vec(&Header {
        arrays,
        meta: meta.clone(),
    })?;
    let mut out = Vec::with_capacity(20 + header.len() + data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&data);
    Ok(out)
}

pub fn save<T: Real>(path: &Path, model: &Model<T>, meta: &CheckpointMeta) -> Result<String> {
    let bytes = to_bytes(model, meta)?;
    crate::io::write_bytes(path, &bytes)?;
    Ok(sha256_hex(&bytes))
}

pub struct Loaded<T> {
    pub model: Model<T>,
    pub meta: CheckpointMeta,
    pub sha256: String,
}

pub fn from_bytes<T: Real>(bytes: &[u8]) -> Result<Loaded<T>> {
    let bad = |m: &str| Error::Schema(format!("checkpoint: {m}"));
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let hend = 20usize
        .checked_add(hlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(&bytes[20..hend]).map_err(|e| bad(&e.to_string()))?;
    let data = &bytes[hend..];
    let mut model = Model::<T>::new(header.meta.model.clone())?;
    let mut err: Option<Error> = None;
    let mut i = 0;
    model.visit_mut(&mut |p| {
        if err.is_some() {
            return;
        }
        let Some(e) = header.arrays.get(i) else {
            err = Some(bad(&format!("missing array {}", p.name)));
            return;
        };
        i += 1;
        if e.name != p.name || e.shape != p.shape {
            err = Some(bad(&format!(
                "array {} {:?} does not match model parameter {} {:?}",
                e.name, e.shape, p.name, p.shape
            )));
            return;
        }
        let (lo, hi) = (e.offset * 4, (e.offset + p.len()) * 4);
        if hi > data.len() {
            err = Some(bad(&format!("array {} runs past the data block", e.name)));
            return;
        }
        for (v, b) in p.value.iter_mut().zip(data[lo..hi].chunks_exact(4)) {
            *v = T::of(f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64);
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    if i != header.arrays.len() {
        return Err(bad("extra arrays"));
    }
    Ok(Loaded {
        model,
        meta: header.meta,
        sha256: sha256_hex(bytes),
    })
}

pub fn load<T: Real>(path: &Path) -> Result<Loaded<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BackboneConfig, HeadSet};
    use crate::nn::conv::PadMode;

    fn cfg() -> ModelConfig {
        ModelConfig {
            backbone: BackboneConfig {
                stages: 2,
                base_channels: 2,
                input_shape: [4, 4, 4],
                padding: PadMode::Zero,
            },
            heads: HeadSet::default(),
            det_channels: 2,
            text_dim: 3,
            ..Default::default()
        }
    }

    fn meta() -> CheckpointMeta {
        CheckpointMeta {
            stage: "teacher".into(),
            epoch: 3,
            config_hash: "abc".into(),
            metric: Some(0.5),
            model: cfg(),
            roi: RoiSpec::default(),
            text: None,
        }
    }

    #[test]
    fn round_trip_preserves_params() {
        let m = Model::<f32>::new(cfg()).unwrap();
        let bytes = to_bytes(&m, &meta()).unwrap();
        let l = from_bytes::<f32>(&bytes).unwrap();
        assert_eq!(l.meta, meta());
        let a: Vec<f32> = m.named_params().iter().flat_map(|p| p.2.to_vec()).collect();
        let b: Vec<f32> = l.model.named_params().iter().flat_map(|p| p.2.to_vec()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_corruption() {
        let m = Model::<f32>::new(cfg()).unwrap();
        let mut bytes = to_bytes(&m, &meta()).unwrap();
        assert!(from_bytes::<f32>(&bytes[..bytes.len() - 4]).is_err());
        bytes[0] = b'X';
        assert!(from_bytes::<f32>(&bytes).is_err());
    }
}
