//! Raw array files with JSON sidecars, plus the file-access audit log.
//!
//! An array `foo.f32` (or `foo.u8`) holds little-endian samples in z-major
//! C order. Its sidecar `foo.f32.json` records
//! `{"shape": [z, y, x], "dtype": "float32", "spacing_mm": [sx, sy, sz], "order": "zyx"}`.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Dims, Grid, Mask, Volume};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArraySidecar {
    pub shape: [usize; 3],
    pub dtype: String,
    pub spacing_mm: [f64; 3],
    pub order: String,
}

pub const DTYPE_F32: &str = "float32";
pub const DTYPE_U8: &str = "uint8";

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_sidecar(path: &Path, dims: Dims, dtype: &str, spacing_mm: [f64; 3]) -> Result<()> {
    let side = ArraySidecar {
        shape: dims.to_zyx(),
        dtype: dtype.to_string(),
        spacing_mm,
        order: "zyx".to_string(),
    };
    let mut text = serde_json::to_string(&side)?;
    text.push('\n');
    write_bytes(&sidecar_path(path), text.as_bytes())
}

pub fn write_volume(path: &Path, vol: &Volume, spacing_mm: [f64; 3]) -> Result<()> {
    let mut bytes = Vec::with_capacity(vol.data().len() * 4);
    for v in vol.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_bytes(path, &bytes)?;
    write_sidecar(path, vol.dims(), DTYPE_F32, spacing_mm)
}

pub fn write_mask(path: &Path, mask: &Mask, spacing_mm: [f64; 3]) -> Result<()> {
    write_bytes(path, mask.data())?;
    write_sidecar(path, mask.dims(), DTYPE_U8, spacing_mm)
}

fn read_sidecar(path: &Path, expect_dtype: &str) -> Result<ArraySidecar> {
    let sp = sidecar_path(path);
    let text = fs::read_to_string(&sp).map_err(|e| Error::io(&sp, e))?;
    let side: ArraySidecar = serde_json::from_str(&text)?;
    if side.dtype != expect_dtype || side.order != "zyx" {
        return Err(Error::Schema(format!(
            "{}: expected dtype {expect_dtype} order zyx, found {} {}",
            sp.display(),
            side.dtype,
            side.order
        )));
    }
    Ok(side)
}

fn read_raw(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_volume(path: &Path, audit: &Audit) -> Result<Volume> {
    audit.record(path);
    let side = read_sidecar(path, DTYPE_F32)?;
    let bytes = read_raw(path)?;
    let dims = Dims::new(side.shape[0], side.shape[1], side.shape[2]);
    if bytes.len() != dims.len() * 4 {
        return Err(Error::Schema(format!(
            "{}: {} bytes does not match shape {dims}",
            path.display(),
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Grid::from_vec(dims, data)
}

pub fn read_mask(path: &Path, audit: &Audit) -> Result<Mask> {
    audit.record(path);
    let side = read_sidecar(path, DTYPE_U8)?;
    let bytes = read_raw(path)?;
    let dims = Dims::new(side.shape[0], side.shape[1], side.shape[2]);
    Grid::from_vec(dims, bytes).map_err(|_| {
        Error::Schema(format!("{}: size does not match shape {dims}", path.display()))
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub phase: String,
    pub path: PathBuf,
}

#[derive(Debug, Default)]
struct AuditState {
    phase: String,
    entries: Vec<AuditEntry>,
}

/// Records every dataset array opened, tagged with the pipeline phase that
/// opened it. Clones share the same log. A disabled audit records nothing.
#[derive(Clone, Debug, Default)]
pub struct Audit {
    inner: Option<Arc<Mutex<AuditState>>>,
}

impl Audit {
    pub fn disabled() -> Self {
        Audit { inner: None }
    }

    pub fn enabled() -> Self {
        Audit {
            inner: Some(Arc::new(Mutex::new(AuditState {
                phase: "init".into(),
                entries: Vec::new(),
            }))),
        }
    }

    pub fn is_enabled(&self) -> bool {
        self.inner.is_some()
    }

    pub fn set_phase(&self, phase: &str) {
        if let Some(inner) = &self.inner {
            inner.lock().unwrap().phase = phase.to_string();
        }
    }

    pub fn record(&self, path: &Path) {
        if let Some(inner) = &self.inner {
            let mut st = inner.lock().unwrap();
            let phase = st.phase.clone();
            st.entries.push(AuditEntry {
                phase,
                path: path.to_path_buf(),
            });
        }
    }

    pub fn entries(&self) -> Vec<AuditEntry> {
        self.inner
            .as_ref()
            .map(|i| i.lock().unwrap().entries.clone())
            .unwrap_or_default()
    }

    /// One JSON object per line.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for e in self.entries() {
            out.push_str(&serde_json::to_string(&e)?);
            out.push('\n');
        }
        write_bytes(path, out.as_bytes())
    }
}
