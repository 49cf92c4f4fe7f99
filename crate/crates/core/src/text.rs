//! Report-label prompts and their frozen text embeddings.
//!
//! Training never runs a text encoder. Embeddings come from a JSON table
//! (`{"encoder", "dim", "normalized", "rows": {prompt: [f64; dim]}}`) that
//! was produced offline, or from [`pseudo_encode`], a deterministic stand-in
//! that hashes the prompt (FNV-1a, 64-bit) into a ChaCha20 stream and draws
//! Box-Muller normals.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::phantom::LOCATION_BINS;

pub const PROMPT_PREFIX: &str = "A patient with";
pub const PROMPT_SUFFIX: &str = "cancer";

/// Label names in index order. Index 0 is the background "no" label in both lists.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVocabulary {
    pub diagnostic_labels: Vec<String>,
    pub location_labels: Vec<String>,
}

impl Default for LabelVocabulary {
    fn default() -> Self {
        LabelVocabulary {
            diagnostic_labels: vec!["no".into(), "esophageal".into()],
            location_labels: vec![
                "no".into(),
                "upper esophageal".into(),
                "middle esophageal".into(),
                "lower esophageal".into(),
                "esophagogastric junction".into(),
            ],
        }
    }
}

impl LabelVocabulary {
    pub fn contains(&self, label: &str) -> bool {
        self.diagnostic_labels.iter().any(|l| l == label)
            || self.location_labels.iter().any(|l| l == label)
    }

    /// Every distinct prompt, in first-appearance order (diagnostic labels first).
    pub fn prompts(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for l in self.diagnostic_labels.iter().chain(&self.location_labels) {
            let p = format_prompt(l);
            if !out.contains(&p) {
                out.push(p);
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.diagnostic_labels.len() != 2 || self.location_labels.len() != LOCATION_BINS + 1 {
            return Err(invalid(format!(
                "vocabulary needs 2 diagnostic and {} location labels",
                LOCATION_BINS + 1
            )));
        }
        Ok(())
    }
}

fn format_prompt(label: &str) -> String {
    let words: Vec<&str> = label.split_whitespace().collect();
    format!("{PROMPT_PREFIX} {} {PROMPT_SUFFIX}", words.join(" "))
}

/// `"A patient with {label} cancer"` for a label in the default vocabulary.
pub fn build_prompt(label: &str) -> Result<String> {
    build_prompt_in(label, &LabelVocabulary::default())
}

pub fn build_prompt_in(label: &str, vocab: &LabelVocabulary) -> Result<String> {
    if !vocab.contains(label) {
        return Err(invalid(format!("label `{label}` is not in the vocabulary")));
    }
    Ok(format_prompt(label))
}

/// FNV-1a over the UTF-8 bytes.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn unit_open(bits: u64) -> f64 {
    // (0, 1]: never zero, so ln() below stays finite
    ((bits >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Deterministic unit-norm pseudo embedding of a prompt.
pub fn pseudo_encode(prompt: &str, dim: usize) -> Result<Vec<f64>> {
    if dim < 2 {
        return Err(invalid("embedding dimension must be >= 2"));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(fnv1a64(prompt.as_bytes()));
    let mut v = Vec::with_capacity(dim);
    while v.len() < dim {
        let u1 = unit_open(rng.next_u64());
        let u2 = unit_open(rng.next_u64());
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        v.push(r * theta.cos());
        if v.len() < dim {
            v.push(r * theta.sin());
        }
    }
    l2_normalize(&mut v);
    Ok(v)
}

pub fn l2_normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextEmbeddingTable {
    pub encoder: String,
    pub dim: usize,
    pub normalized: bool,
    pub rows: BTreeMap<String, Vec<f64>>,
}

impl TextEmbeddingTable {
    /// Table of pseudo embeddings for every vocabulary prompt.
    pub fn pseudo(vocab: &LabelVocabulary, dim: usize) -> Result<Self> {
        let mut rows = BTreeMap::new();
        for p in vocab.prompts() {
            let v = pseudo_encode(&p, dim)?;
            rows.insert(p, v);
        }
        Ok(TextEmbeddingTable {
            encoder: format!("pseudo-fnv1a-chacha20-d{dim}"),
            dim,
            normalized: true,
            rows,
        })
    }

    pub fn row(&self, prompt: &str) -> Option<&[f64]> {
        self.rows.get(prompt).map(|v| v.as_slice())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)? + "\n")
    }

    /// Check row lengths and vocabulary coverage.
    pub fn validate(&self, vocab: &LabelVocabulary) -> Result<()> {
        for (p, v) in &self.rows {
            if v.len() != self.dim {
                return Err(Error::Schema(format!(
                    "row `{p}` has {} values, table dim is {}",
                    v.len(),
                    self.dim
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Schema(format!("row `{p}` has non-finite values")));
            }
        }
        for p in vocab.prompts() {
            if !self.rows.contains_key(&p) {
                return Err(Error::Schema(format!("table is missing prompt `{p}`")));
            }
        }
        Ok(())
    }

    pub fn normalize_rows(&mut self) {
        for v in self.rows.values_mut() {
            l2_normalize(v);
        }
        self.normalized = true;
    }
}

/// Load and validate an embedding table. `expected_dim` is the model's text
/// dimension; `normalize` L2-normalizes every row after loading.
pub fn load_embedding_table(
    path: &Path,
    vocab: &LabelVocabulary,
    expected_dim: Option<usize>,
    normalize: bool,
) -> Result<TextEmbeddingTable> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut table: TextEmbeddingTable =
        serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    table.validate(vocab)?;
    if let Some(d) = expected_dim {
        if d != table.dim {
            return Err(Error::Config(format!(
                "embedding table dim {} does not match model text dim {d}",
                table.dim
            )));
        }
    }
    if normalize {
        table.normalize_rows();
    }
    Ok(table)
}

/// Row-major text feature matrices: detection (2 x D) and location ((L+1) x D).
#[derive(Clone, Debug, PartialEq)]
pub struct TextMatrices {
    pub dim: usize,
    pub e_det: Vec<f64>,
    pub e_loc: Vec<f64>,
}

impl TextMatrices {
    pub fn det_rows(&self) -> usize {
        self.e_det.len() / self.dim
    }

    pub fn loc_rows(&self) -> usize {
        self.e_loc.len() / self.dim
    }

    pub fn det_row(&self, k: usize) -> &[f64] {
        &self.e_det[k * self.dim..(k + 1) * self.dim]
    }

    pub fn loc_row(&self, k: usize) -> &[f64] {
        &self.e_loc[k * self.dim..(k + 1) * self.dim]
    }
}

pub fn assemble_text_matrices(table: &TextEmbeddingTable, vocab: &LabelVocabulary) -> Result<TextMatrices> {
    vocab.validate()?;
    table.validate(vocab)?;
    let gather = |labels: &[String]| -> Vec<f64> {
        labels
            .iter()
            .flat_map(|l| table.row(&format_prompt(l)).expect("validated").iter().copied())
            .collect()
    };
    Ok(TextMatrices {
        dim: table.dim,
        e_det: gather(&vocab.diagnostic_labels),
        e_loc: gather(&vocab.location_labels),
    })
}
