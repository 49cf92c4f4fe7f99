//! Loading manifest records into model-space samples.

use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Mask, Volume};
use crate::io::{self, Audit};
use crate::losses::WeakLabels;
use crate::phantom::{ManifestRecord, Supervision};
use crate::preprocess::{extract_roi, normalize, resize_nearest, resize_trilinear, RoiSpec};

/// One record cropped to its organ ROI, resized to the model input shape and
/// intensity-normalized. Masks live in the same model space.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub input: Volume,
    pub organ: Mask,
    pub mask: Option<Mask>,
    pub diagnosis: u8,
    pub location: u8,
    pub supervision: Supervision,
}

impl Sample {
    pub fn labels(&self) -> WeakLabels {
        WeakLabels {
            diagnosis: self.diagnosis,
            location: self.location,
        }
    }
}

/// Which tumor mask to read for a record.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskSource {
    /// Read no tumor mask at all.
    None,
    /// The mask visible to training; weak records have none.
    Visible,
    /// The evaluation mask, including the hidden masks of weak records.
    /// Only post-training analysis may use this.
    Evaluation,
}

pub fn load_sample(dir: &Path, rec: &ManifestRecord, roi: &RoiSpec, masks: MaskSource, audit: &Audit) -> Result<Sample> {
    let at = |e: Error| e.in_stage(&format!("load record {}", rec.id));
    let vol = io::read_volume(&dir.join(&rec.volume), audit).map_err(at)?;
    let organ = io::read_mask(&dir.join(&rec.organ_mask), audit).map_err(at)?;
    let mask_path = match masks {
        MaskSource::None => None,
        MaskSource::Visible => rec.mask.as_deref(),
        MaskSource::Evaluation => rec.eval_mask(),
    };
    let mask = match mask_path {
        Some(p) => Some(io::read_mask(&dir.join(p), audit).map_err(at)?),
        None => None,
    };
    let r = extract_roi(&vol, &organ, mask.as_ref(), roi)?;
    let target = roi.target_dims();
    let (input, _) = normalize(&resize_trilinear(&r.volume, target)?);
    Ok(Sample {
        id: rec.id.clone(),
        input,
        organ: resize_nearest(&r.organ_mask, target)?,
        mask: r.tumor_mask.map(|m| resize_nearest(&m, target)).transpose()?,
        diagnosis: rec.diagnosis,
        location: rec.location,
        supervision: rec.supervision,
    })
}

pub fn load_samples<'a>(
    dir: &Path,
    records: impl IntoIterator<Item = &'a ManifestRecord>,
    roi: &RoiSpec,
    masks: MaskSource,
    audit: &Audit,
) -> Result<Vec<Sample>> {
    records
        .into_iter()
        .map(|r| load_sample(dir, r, roi, masks, audit))
        .collect()
}
