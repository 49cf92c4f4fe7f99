//! Synthetic tube-organ phantoms with report-style weak labels.
//!
//! Each phantom is a noisy tube running along z inside a soft-tissue body,
//! with a widened cap at the bottom (the junction bin). Cancer cases carry an
//! ellipsoidal tumor centered inside one of four axial location bins. Bright
//! distractor blobs with tumor-like contrast are scattered outside the organ
//! in every case, so image-level labels alone do not reveal where to look.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{config, invalid, Error, Result};
use crate::grid::{Dims, Grid, Mask, Volume};
use crate::io;
use crate::util::{apportion, derive_seed, rng_for};

/// Number of tumor location bins (upper, middle, lower, junction).
pub const LOCATION_BINS: usize = 4;

const BODY_LEVEL: f32 = 0.0;
const AIR_LEVEL: f32 = -1.0;
const ORGAN_LEVEL: f32 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomConfig {
    /// `[W, H, Z]` in voxels.
    pub volume_shape: [usize; 3],
    /// `[sx, sy, sz]` in millimetres; metadata only.
    pub voxel_spacing: [f64; 3],
    pub organ_radius_range: [f64; 2],
    pub tumor_radius_range: [f64; 2],
    pub tumor_contrast: f64,
    pub noise_sigma: f64,
    pub cancer_prevalence: f64,
    /// Upper bound on distractor blobs per volume.
    pub distractor_count: usize,
    /// Largest gap (voxels) between a distractor and the organ surface;
    /// unbounded when unset.
    pub distractor_max_gap: Option<f64>,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            volume_shape: [48, 48, 48],
            voxel_spacing: [0.7, 0.7, 5.0],
            organ_radius_range: [3.0, 5.0],
            tumor_radius_range: [1.5, 3.5],
            tumor_contrast: 0.35,
            noise_sigma: 0.25,
            cancer_prevalence: 0.59,
            distractor_count: 3,
            distractor_max_gap: None,
            seed: 0,
        }
    }
}

impl PhantomConfig {
    pub fn dims(&self) -> Dims {
        Dims::from_whz(self.volume_shape)
    }

    pub fn validate(&self) -> Result<()> {
        if self.volume_shape.iter().any(|&s| s < 8) {
            return Err(config("volume_shape entries must all be >= 8"));
        }
        let [olo, ohi] = self.organ_radius_range;
        let [tlo, thi] = self.tumor_radius_range;
        if !(olo >= 1.0 && olo <= ohi) {
            return Err(config("organ_radius_range must satisfy 1 <= lo <= hi"));
        }
        if !(tlo > 0.0 && tlo <= thi) {
            return Err(config("tumor_radius_range must satisfy 0 < lo <= hi"));
        }
        if thi > ohi + TUMOR_MARGIN {
            return Err(config(format!(
                "tumor radius {thi} exceeds organ radius {ohi} plus margin {TUMOR_MARGIN}"
            )));
        }
        let (zlo, zhi) = organ_z_span(self.dims());
        let shortest = bin_ranges(zlo, zhi)
            .iter()
            .map(|(a, b)| b - a + 1)
            .min()
            .unwrap_or(0);
        if (2.0 * thi.floor() + 1.0) > shortest as f64 {
            return Err(config(format!(
                "tumor diameter {} does not fit a location bin of {shortest} slices",
                2.0 * thi
            )));
        }
        if 2.0 * (ohi * 1.6 + 2.0) + 2.0 > self.volume_shape[0].min(self.volume_shape[1]) as f64 {
            return Err(config("organ does not fit the volume cross-section"));
        }
        if self.distractor_max_gap.is_some_and(|g| !(g >= 0.0)) {
            return Err(config("distractor_max_gap must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.cancer_prevalence) {
            return Err(config("cancer_prevalence must lie in [0, 1]"));
        }
        if self.noise_sigma < 0.0 || !self.tumor_contrast.is_finite() {
            return Err(config("noise_sigma must be >= 0 and tumor_contrast finite"));
        }
        Ok(())
    }
}

/// Tumor voxels may protrude this far (voxels) beyond the organ surface.
pub const TUMOR_MARGIN: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Supervision {
    Full,
    Weak,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(invalid(format!("unknown split `{other}`"))),
        }
    }
}

/// Geometry of a generated tumor, kept for oracles and reporting.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TumorGeometry {
    /// Center in voxel coordinates `(z, y, x)`.
    pub center: [f64; 3],
    /// Semi-axes in voxels `(z, y, x)`.
    pub radii: [f64; 3],
    /// 1 (early, small and faint) or 2 (larger, brighter).
    pub stage: u8,
    pub contrast: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatientRecord {
    pub id: String,
    pub volume: Volume,
    pub mask: Option<Mask>,
    pub organ_mask: Mask,
    pub diagnosis: u8,
    pub location: u8,
    pub supervision: Supervision,
    pub tumor: Option<TumorGeometry>,
}

/// z-range spanned by the organ tube for a volume of the given size.
pub fn organ_z_span(dims: Dims) -> (usize, usize) {
    let margin = (dims.z / 12).max(1);
    (margin, dims.z - 1 - margin)
}

/// Inclusive slice ranges of the location bins over the organ extent
/// `[z_lo, z_hi]`; index 0 is bin 1 (top), index 3 is the junction.
pub fn bin_ranges(z_lo: usize, z_hi: usize) -> Vec<(usize, usize)> {
    let n = z_hi + 1 - z_lo;
    (0..LOCATION_BINS)
        .map(|b| {
            let start = z_lo + b * n / LOCATION_BINS;
            let end = z_lo + (b + 1) * n / LOCATION_BINS;
            (start, end.max(start + 1) - 1)
        })
        .collect()
}

/// Location bin (1-based) holding slice `z`, or `None` outside the extent.
pub fn bin_of_slice(z: usize, z_lo: usize, z_hi: usize) -> Option<usize> {
    bin_ranges(z_lo, z_hi)
        .iter()
        .position(|&(a, b)| z >= a && z <= b)
        .map(|i| i + 1)
}

struct Tube {
    cx: Vec<f64>,
    cy: Vec<f64>,
    r: Vec<f64>,
    z_lo: usize,
    z_hi: usize,
}

impl Tube {
    fn sample<R: Rng>(dims: Dims, cfg: &PhantomConfig, rng: &mut R) -> Tube {
        let (z_lo, z_hi) = organ_z_span(dims);
        let [olo, ohi] = cfg.organ_radius_range;
        let r0 = rng.random_range(olo..=ohi);
        let (ax, ay) = (rng.random_range(0.5..2.0), rng.random_range(0.5..2.0));
        let (px, py) = (rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI));
        let (fx, fy) = (rng.random_range(0.5..1.5), rng.random_range(0.5..1.5));
        let wobble_phase = rng.random_range(0.0..2.0 * PI);
        let mid_x = (dims.x as f64 - 1.0) / 2.0;
        let mid_y = (dims.y as f64 - 1.0) / 2.0;
        let bins = bin_ranges(z_lo, z_hi);
        let cap_start = bins[LOCATION_BINS - 1].0;
        let mut tube = Tube {
            cx: vec![mid_x; dims.z],
            cy: vec![mid_y; dims.z],
            r: vec![0.0; dims.z],
            z_lo,
            z_hi,
        };
        for z in z_lo..=z_hi {
            let t = z as f64 / dims.z as f64;
            tube.cx[z] = mid_x + ax * (2.0 * PI * fx * t + px).sin();
            tube.cy[z] = mid_y + ay * (2.0 * PI * fy * t + py).sin();
            let mut r = r0 * (1.0 + 0.08 * (6.0 * PI * t + wobble_phase).sin());
            if z >= cap_start {
                let span = (z_hi - cap_start).max(1) as f64;
                r *= 1.0 + 0.6 * (z - cap_start) as f64 / span;
            }
            tube.r[z] = r.max(1.0);
        }
        tube
    }

    fn contains(&self, z: usize, y: usize, x: usize) -> bool {
        if z < self.z_lo || z > self.z_hi {
            return false;
        }
        let dx = x as f64 - self.cx[z];
        let dy = y as f64 - self.cy[z];
        dx * dx + dy * dy <= self.r[z] * self.r[z]
    }

    fn distance_to_axis(&self, z: usize, y: f64, x: f64) -> f64 {
        let zc = z.clamp(self.z_lo, self.z_hi);
        ((x - self.cx[zc]).powi(2) + (y - self.cy[zc]).powi(2)).sqrt()
    }
}

/// Whether voxel `(z, y, x)` lies inside the ellipsoid.
pub fn in_ellipsoid(center: [f64; 3], radii: [f64; 3], z: usize, y: usize, x: usize) -> bool {
    let p = [z as f64, y as f64, x as f64];
    let q: f64 = (0..3).map(|a| ((p[a] - center[a]) / radii[a]).powi(2)).sum();
    q <= 1.0
}

/// Generate one patient. `location_bin` must be in `1..=4` for cancer cases
/// and `0` otherwise. Deterministic in `(config, cancer, location_bin, seed)`.
pub fn generate_patient(
    config: &PhantomConfig,
    cancer: bool,
    location_bin: u8,
    seed: u64,
) -> Result<PatientRecord> {
    if cancer && !(1..=LOCATION_BINS as u8).contains(&location_bin) {
        return Err(invalid(format!(
            "cancer case needs a location bin in 1..={LOCATION_BINS}, got {location_bin}"
        )));
    }
    if !cancer && location_bin != 0 {
        return Err(invalid(format!(
            "normal case must have location bin 0, got {location_bin}"
        )));
    }
    config.validate()?;
    let dims = config.dims();
    let mut rng = rng_for(seed, 0x5048_414E);
    let tube = Tube::sample(dims, config, &mut rng);

    // Soft-tissue body: an axis-aligned ellipse filling most of each slice.
    let body_rx = dims.x as f64 * rng.random_range(0.42..0.48);
    let body_ry = dims.y as f64 * rng.random_range(0.38..0.46);
    let mid_x = (dims.x as f64 - 1.0) / 2.0;
    let mid_y = (dims.y as f64 - 1.0) / 2.0;
    let in_body =
        |y: usize, x: usize| ((x as f64 - mid_x) / body_rx).powi(2) + ((y as f64 - mid_y) / body_ry).powi(2) <= 1.0;

    let organ_mask = Grid::from_fn(dims, |z, y, x| u8::from(tube.contains(z, y, x)));

    let tumor = if cancer {
        Some(sample_tumor(config, &tube, location_bin as usize, &mut rng))
    } else {
        None
    };
    let mask = Grid::from_fn(dims, |z, y, x| match &tumor {
        Some(t) => u8::from(in_ellipsoid(t.center, t.radii, z, y, x)),
        None => 0,
    });

    let distractors = sample_distractors(config, &tube, dims, &mut rng);

    let noise = Normal::new(0.0, config.noise_sigma.max(0.0)).expect("finite sigma");
    let mut volume = Grid::from_fn(dims, |z, y, x| {
        if !in_body(y, x) {
            return AIR_LEVEL;
        }
        let mut v = if tube.contains(z, y, x) { ORGAN_LEVEL } else { BODY_LEVEL };
        for d in &distractors {
            if in_ellipsoid(d.center, d.radii, z, y, x) && !tube.contains(z, y, x) {
                v = ORGAN_LEVEL + d.contrast as f32;
            }
        }
        v
    });
    if let Some(t) = &tumor {
        for (v, &m) in volume.data_mut().iter_mut().zip(mask.data()) {
            if m != 0 {
                *v = ORGAN_LEVEL + t.contrast as f32;
            }
        }
    }
    if config.noise_sigma > 0.0 {
        for v in volume.data_mut() {
            *v += noise.sample(&mut rng) as f32;
        }
    }

    Ok(PatientRecord {
        id: String::new(),
        volume,
        mask: Some(mask),
        organ_mask,
        diagnosis: u8::from(cancer),
        location: location_bin,
        supervision: Supervision::Full,
        tumor,
    })
}

fn sample_tumor<R: Rng>(cfg: &PhantomConfig, tube: &Tube, bin: usize, rng: &mut R) -> TumorGeometry {
    let [tlo, thi] = cfg.tumor_radius_range;
    let mid = 0.5 * (tlo + thi);
    let stage: u8 = if rng.random_bool(0.5) { 1 } else { 2 };
    let (rlo, rhi, gain) = if stage == 1 { (tlo, mid, 0.8) } else { (mid, thi, 1.2) };
    let mut radii = [
        rng.random_range(rlo..=rhi),
        rng.random_range(rlo..=rhi),
        rng.random_range(rlo..=rhi),
    ];
    let (blo, bhi) = bin_ranges(tube.z_lo, tube.z_hi)[bin - 1];
    // Keep every tumor slice inside the bin.
    let half_span = (bhi - blo) as f64 / 2.0;
    radii[0] = radii[0].min(half_span.max(0.5));
    let zmin = blo as f64 + radii[0].floor();
    let zmax = bhi as f64 - radii[0].floor();
    let cz = if zmax > zmin {
        rng.random_range(zmin..=zmax)
    } else {
        0.5 * (zmin + zmax)
    }
    .round();
    let zc = cz as usize;
    let angle = rng.random_range(0.0..2.0 * PI);
    let offset = tube.r[zc] * rng.random_range(0.0..0.6);
    let cy = tube.cy[zc] + offset * angle.sin();
    let cx = tube.cx[zc] + offset * angle.cos();
    TumorGeometry {
        center: [cz, cy, cx],
        radii,
        stage,
        contrast: cfg.tumor_contrast * gain,
    }
}

fn sample_distractors<R: Rng>(
    cfg: &PhantomConfig,
    tube: &Tube,
    dims: Dims,
    rng: &mut R,
) -> Vec<TumorGeometry> {
    let count = rng.random_range(0..=cfg.distractor_count);
    let [tlo, thi] = cfg.tumor_radius_range;
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count && attempts < 1000 {
        attempts += 1;
        let r = rng.random_range(tlo..=thi);
        let cz = rng.random_range(r..dims.z as f64 - 1.0 - r);
        let cy = rng.random_range(r + 2.0..dims.y as f64 - 3.0 - r);
        let cx = rng.random_range(r + 2.0..dims.x as f64 - 3.0 - r);
        let zc = (cz.round() as usize).min(dims.z - 1);
        let clearance = tube.distance_to_axis(zc, cy, cx) - tube.r[zc.clamp(tube.z_lo, tube.z_hi)];
        if clearance < r + 2.0 || cfg.distractor_max_gap.is_some_and(|g| clearance > r + 2.0 + g) {
            continue;
        }
        out.push(TumorGeometry {
            center: [cz, cy, cx],
            radii: [r, r, r],
            stage: 0,
            contrast: cfg.tumor_contrast * rng.random_range(0.8..1.2),
        });
    }
    out
}

/// One manifest line. `mask` is the mask visible to training; weak records
/// keep their on-disk mask only under `hidden_mask`, which training never reads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    pub split: Split,
    pub diagnosis: u8,
    pub location: u8,
    pub supervision: Supervision,
    pub volume: PathBuf,
    pub organ_mask: PathBuf,
    pub mask: Option<PathBuf>,
    pub hidden_mask: Option<PathBuf>,
    pub stage: u8,
}

impl ManifestRecord {
    /// Mask path for evaluation, whether or not it is visible to training.
    pub fn eval_mask(&self) -> Option<&Path> {
        self.mask.as_deref().or(self.hidden_mask.as_deref())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetInfo {
    pub phantom: PhantomConfig,
    pub n: usize,
    pub split_ratios: [f64; 3],
    pub seed: u64,
    pub full_fraction: Option<f64>,
    pub supervision_seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
    pub info: DatasetInfo,
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const DATASET_FILE: &str = "dataset.json";

impl Manifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        io::write_bytes(&dir.join(MANIFEST_FILE), self.to_jsonl()?.as_bytes())?;
        let mut info = serde_json::to_string_pretty(&self.info)?;
        info.push('\n');
        io::write_bytes(&dir.join(DATASET_FILE), info.as_bytes())
    }

    pub fn read(dir: &Path) -> Result<Manifest> {
        let mpath = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: ManifestRecord = serde_json::from_str(line).map_err(|e| {
                Error::Schema(format!("{} line {}: {e}", mpath.display(), i + 1))
            })?;
            records.push(rec);
        }
        let ipath = dir.join(DATASET_FILE);
        let itext = std::fs::read_to_string(&ipath).map_err(|e| Error::io(&ipath, e))?;
        let info = serde_json::from_str(&itext)?;
        Ok(Manifest { records, info })
    }
}

/// Generate `n` phantoms stratified by diagnosis into train/val/test, write
/// their arrays under `out_dir`, and write the manifest.
pub fn generate_dataset(
    config: &PhantomConfig,
    n: usize,
    split_ratios: [f64; 3],
    seed: u64,
    out_dir: &Path,
) -> Result<Manifest> {
    if n < 20 {
        return Err(config_err(format!("dataset needs n >= 20, got {n}")));
    }
    if split_ratios.iter().any(|&r| r < 0.0) || (split_ratios.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
        return Err(config_err("split ratios must be non-negative and sum to 1".into()));
    }
    config.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let n_cancer = (config.cancer_prevalence * n as f64).round() as usize;
    let split_sizes = apportion(n, &split_ratios);
    let cancer_per_split = apportion(
        n_cancer,
        &split_sizes.iter().map(|&s| s as f64).collect::<Vec<_>>(),
    );

    let mut rng = rng_for(seed, 0x4453);
    let mut plan: Vec<(Split, bool)> = Vec::with_capacity(n);
    for (si, split) in Split::ALL.iter().enumerate() {
        let mut flags: Vec<bool> = (0..split_sizes[si]).map(|i| i < cancer_per_split[si]).collect();
        flags.shuffle(&mut rng);
        plan.extend(flags.into_iter().map(|c| (*split, c)));
    }

    let spacing = config.voxel_spacing;
    let mut records = Vec::with_capacity(n);
    for (idx, (split, cancer)) in plan.into_iter().enumerate() {
        let id = format!("p{idx:04}");
        let bin = if cancer { rng.random_range(1..=LOCATION_BINS as u8) } else { 0 };
        let mut patient = generate_patient(config, cancer, bin, derive_seed(seed, idx as u64))?;
        patient.id = id.clone();
        let volume = PathBuf::from(format!("volumes/{id}.f32"));
        let organ = PathBuf::from(format!("organs/{id}.u8"));
        let mask = PathBuf::from(format!("masks/{id}.u8"));
        io::write_volume(&out_dir.join(&volume), &patient.volume, spacing)?;
        io::write_mask(&out_dir.join(&organ), &patient.organ_mask, spacing)?;
        io::write_mask(&out_dir.join(&mask), patient.mask.as_ref().expect("generated mask"), spacing)?;
        records.push(ManifestRecord {
            id,
            split,
            diagnosis: patient.diagnosis,
            location: patient.location,
            supervision: Supervision::Full,
            volume,
            organ_mask: organ,
            mask: Some(mask),
            hidden_mask: None,
            stage: patient.tumor.map(|t| t.stage).unwrap_or(0),
        });
    }
    let manifest = Manifest {
        records,
        info: DatasetInfo {
            phantom: config.clone(),
            n,
            split_ratios,
            seed,
            full_fraction: None,
            supervision_seed: None,
        },
    };
    manifest.write(out_dir)?;
    Ok(manifest)
}

fn config_err(msg: String) -> Error {
    Error::Config(msg)
}

/// Mark a stratified `full_fraction` of the train split as fully supervised
/// and hide the masks of the rest. Validation and test records are untouched.
pub fn assign_supervision(manifest: &Manifest, full_fraction: f64, seed: u64) -> Result<Manifest> {
    if !(full_fraction > 0.0 && full_fraction <= 1.0) {
        return Err(invalid(format!(
            "full_fraction must lie in (0, 1], got {full_fraction}"
        )));
    }
    let mut out = manifest.clone();
    // Start from a clean slate so repeated assignment is idempotent.
    for r in out.records.iter_mut() {
        if r.supervision == Supervision::Weak {
            r.mask = r.hidden_mask.take();
            r.supervision = Supervision::Full;
        }
    }
    let train: Vec<usize> = (0..out.records.len())
        .filter(|&i| out.records[i].split == Split::Train)
        .collect();
    if train.is_empty() {
        return Err(invalid("manifest has no train records"));
    }
    let n_full = ((full_fraction * train.len() as f64).round() as usize).clamp(1, train.len());
    let (pos, neg): (Vec<usize>, Vec<usize>) =
        train.iter().partition(|&&i| out.records[i].diagnosis == 1);
    let per_class = apportion(n_full, &[pos.len() as f64, neg.len() as f64]);
    let mut rng = rng_for(seed, 0x5355_5056);
    let mut full = Vec::with_capacity(n_full);
    for (mut group, take) in [(pos, per_class[0]), (neg, per_class[1])] {
        group.shuffle(&mut rng);
        full.extend(group.into_iter().take(take));
    }
    for &i in &train {
        if !full.contains(&i) {
            let r = &mut out.records[i];
            r.supervision = Supervision::Weak;
            r.hidden_mask = r.mask.take();
        }
    }
    out.info.full_fraction = Some(full_fraction);
    out.info.supervision_seed = Some(seed);
    Ok(out)
}

/// Load one manifest record's volume and organ mask, plus its visible mask.
pub fn load_record(
    dir: &Path,
    rec: &ManifestRecord,
    audit: &io::Audit,
) -> Result<(Volume, Mask, Option<Mask>)> {
    let vol = io::read_volume(&dir.join(&rec.volume), audit)?;
    let organ = io::read_mask(&dir.join(&rec.organ_mask), audit)?;
    let mask = match &rec.mask {
        Some(p) => Some(io::read_mask(&dir.join(p), audit)?),
        None => None,
    };
    Ok((vol, organ, mask))
}
