//! Pseudo masks for weakly labelled records.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::data::Sample;
use super::train::predicted_mask;
use crate::error::{invalid, Error, Result};
use crate::grid::{Grid, Mask};
use crate::io::{self, Audit};
use crate::model::{input_tensor, Model};
use crate::phantom::{bin_ranges, LOCATION_BINS};
use crate::nn::Real;
use crate::util::sha256_hex;

pub const PROVENANCE_FILE: &str = "provenance.json";

/// Model-space arrays carry unit spacing.
const UNIT_SPACING: [f64; 3] = [1.0, 1.0, 1.0];

/// 26-connected component labels (0 = background, 1..=n) and the count `n`.
pub fn connected_components(mask: &Mask) -> (Vec<u32>, usize) {
    let d = mask.dims();
    let data = mask.data();
    let mut labels = vec![0u32; data.len()];
    let mut n = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..data.len() {
        if data[start] == 0 || labels[start] != 0 {
            continue;
        }
        n += 1;
        labels[start] = n;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let (z, y, x) = d.coords(i);
            for dz in -1i64..=1 {
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (nz, ny, nx) = (z as i64 + dz, y as i64 + dy, x as i64 + dx);
                        if nz < 0 || ny < 0 || nx < 0 || nz >= d.z as i64 || ny >= d.y as i64 || nx >= d.x as i64 {
                            continue;
                        }
                        let j = d.index(nz as usize, ny as usize, nx as usize);
                        if data[j] != 0 && labels[j] == 0 {
                            labels[j] = n;
                            queue.push_back(j);
                        }
                    }
                }
            }
        }
    }
    (labels, n as usize)
}

/// Keep only the components whose centroid slice lies inside the reported
/// location bin, with bins taken over the organ's z-extent. A centroid
/// between slices belongs to the nearer one. Label 0 removes everything.
pub fn filter_pseudo_by_location(mask: &Mask, location: u8, organ: &Mask) -> Result<Mask> {
    if location as usize > LOCATION_BINS {
        return Err(invalid(format!("location label {location} outside 0..={LOCATION_BINS}")));
    }
    if mask.dims() != organ.dims() {
        return Err(invalid("pseudo mask and organ mask must share a shape"));
    }
    let d = mask.dims();
    let mut out = Grid::filled(d, 0u8);
    let (Some((z_lo, z_hi)), true) = (organ.z_extent(), location > 0) else {
        return Ok(out);
    };
    let (a, b) = bin_ranges(z_lo, z_hi)[location as usize - 1];
    let (lo, hi) = (a as f64 - 0.5, b as f64 + 0.5);
    let (labels, n) = connected_components(mask);
    let mut zsum = vec![0.0f64; n + 1];
    let mut count = vec![0usize; n + 1];
    for (i, &l) in labels.iter().enumerate() {
        if l > 0 {
            zsum[l as usize] += d.coords(i).0 as f64;
            count[l as usize] += 1;
        }
    }
    let keep: Vec<bool> = (0..=n)
        .map(|c| c > 0 && {
            let cz = zsum[c] / count[c] as f64;
            cz >= lo && cz < hi
        })
        .collect();
    for (o, &l) in out.data_mut().iter_mut().zip(&labels) {
        *o = u8::from(keep[l as usize]);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PseudoEntry {
    pub mask: PathBuf,
    pub probs: PathBuf,
    pub foreground_voxels: usize,
}

/// `provenance.json`: how the pseudo masks were made and where they live,
/// relative to the pseudo-mask directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PseudoLabelSet {
    pub teacher_sha256: String,
    pub threshold: f64,
    pub filter_applied: bool,
    pub provenance_hash: String,
    pub records: BTreeMap<String, PseudoEntry>,
}

pub fn provenance_hash(teacher_sha256: &str, threshold: f64, filter_applied: bool) -> String {
    let key = format!("{teacher_sha256}|{:016x}|{filter_applied}", threshold.to_bits());
    sha256_hex(key.as_bytes())
}

impl PseudoLabelSet {
    pub fn read(dir: &Path) -> Result<Self> {
        let p = dir.join(PROVENANCE_FILE);
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", p.display())))
    }

    /// Masks for exactly the given ids; any missing id is a config error.
    pub fn load_masks(&self, dir: &Path, ids: &[&str], audit: &Audit) -> Result<BTreeMap<String, Mask>> {
        let wanted: BTreeSet<&str> = ids.iter().copied().collect();
        let mut out = BTreeMap::new();
        for id in &wanted {
            let e = self
                .records
                .get(*id)
                .ok_or_else(|| Error::Config(format!("no pseudo mask for weak record {id}")))?;
            let m = io::read_mask(&dir.join(&e.mask), audit)?;
            if !m.is_binary() {
                return Err(Error::Schema(format!("pseudo mask for {id} is not binary")));
            }
            out.insert(id.to_string(), m);
        }
        Ok(out)
    }
}

/// Threshold the teacher's foreground probabilities on every sample, write
/// masks, probability maps and `provenance.json` under `dir`.
pub fn generate_pseudo_masks<T: Real>(
    teacher: &Model<T>,
    teacher_sha256: &str,
    samples: &[Sample],
    threshold: f64,
    filter: bool,
    dir: &Path,
) -> Result<PseudoLabelSet> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(invalid("threshold must lie in [0, 1]"));
    }
    if !teacher.cfg.heads.seg {
        return Err(Error::Config("pseudo labelling needs a segmentation head".into()));
    }
    let mut records = BTreeMap::new();
    for s in samples {
        let (out, _) = teacher.forward(&input_tensor::<T>(&s.input))?;
        let d = s.input.dims();
        let probs = out.foreground_probs().expect("segmentation head");
        let mut mask = predicted_mask(&out, threshold, d).expect("segmentation head");
        if filter {
            mask = filter_pseudo_by_location(&mask, s.location, &s.organ)?;
        }
        let entry = PseudoEntry {
            mask: PathBuf::from(format!("{}.u8", s.id)),
            probs: PathBuf::from(format!("{}.prob.f32", s.id)),
            foreground_voxels: mask.count(),
        };
        io::write_mask(&dir.join(&entry.mask), &mask, UNIT_SPACING)?;
        let pv = Grid::from_vec(d, probs.iter().map(|&p| p as f32).collect())?;
        io::write_volume(&dir.join(&entry.probs), &pv, UNIT_SPACING)?;
        records.insert(s.id.clone(), entry);
    }
    let set = PseudoLabelSet {
        teacher_sha256: teacher_sha256.to_string(),
        threshold,
        filter_applied: filter,
        provenance_hash: provenance_hash(teacher_sha256, threshold, filter),
        records,
    };
    let text = serde_json::to_string_pretty(&set)? + "\n";
    io::write_bytes(&dir.join(PROVENANCE_FILE), text.as_bytes())?;
    Ok(set)
}
