//! ROI extraction, resizing, intensity normalization and augmentation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, invalid, Error, Result};
use crate::grid::{BoundingBox, Dims, Grid, Mask, Volume};
use crate::interp;
use crate::util::rng_for;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoiSpec {
    /// `[mx, my, mz]` voxels added on each side of the organ bounding box.
    pub margin: [usize; 3],
    /// `[W, H, Z]` shape the cropped ROI is resized to.
    pub target_shape: [usize; 3],
}

impl Default for RoiSpec {
    fn default() -> Self {
        RoiSpec {
            margin: [32, 32, 4],
            target_shape: [96, 96, 64],
        }
    }
}

impl RoiSpec {
    pub fn target_dims(&self) -> Dims {
        Dims::from_whz(self.target_shape)
    }

    /// Target axes must be at least 4 and divisible by `2^(stages-1)`.
    pub fn validate(&self, stages: usize) -> Result<()> {
        let div = 1usize << stages.saturating_sub(1);
        for &s in &self.target_shape {
            if s < 4 || s % div != 0 {
                return Err(config(format!(
                    "target_shape {:?} must have axes >= 4 divisible by {div}",
                    self.target_shape
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Roi {
    pub bbox: BoundingBox,
    pub volume: Volume,
    pub organ_mask: Mask,
    pub tumor_mask: Option<Mask>,
}

/// Organ bounding box grown by `margin` (`[mx, my, mz]`) and clamped to the volume.
pub fn roi_box(organ_mask: &Mask, margin: [usize; 3]) -> Result<BoundingBox> {
    let tight = organ_mask
        .bounding_box()
        .ok_or_else(|| Error::Degenerate("organ mask is empty".into()))?;
    let d = organ_mask.dims().to_zyx();
    // margin is given x, y, z; boxes are z, y, x
    let m = [margin[2], margin[1], margin[0]];
    let mut lo = [0; 3];
    let mut hi = [0; 3];
    for a in 0..3 {
        lo[a] = tight.lo[a].saturating_sub(m[a]);
        hi[a] = (tight.hi[a] + m[a]).min(d[a] - 1);
    }
    Ok(BoundingBox { lo, hi })
}

/// Crop volume and masks to the organ ROI.
pub fn extract_roi(
    volume: &Volume,
    organ_mask: &Mask,
    tumor_mask: Option<&Mask>,
    spec: &RoiSpec,
) -> Result<Roi> {
    if volume.dims() != organ_mask.dims() || tumor_mask.is_some_and(|m| m.dims() != volume.dims()) {
        return Err(invalid("volume and masks must share a shape"));
    }
    let bbox = roi_box(organ_mask, spec.margin)?;
    Ok(Roi {
        bbox,
        volume: volume.crop(&bbox),
        organ_mask: organ_mask.crop(&bbox),
        tumor_mask: tumor_mask.map(|m| m.crop(&bbox)),
    })
}

pub fn resize_trilinear(volume: &Volume, target: Dims) -> Result<Volume> {
    if volume.dims().min_axis() < 1 || target.min_axis() < 1 {
        return Err(invalid("resize needs non-empty shapes"));
    }
    Grid::from_vec(target, interp::resize(volume.data(), volume.dims(), target))
}

pub fn resize_nearest(mask: &Mask, target: Dims) -> Result<Mask> {
    let d = mask.dims();
    if d.min_axis() < 1 || target.min_axis() < 1 {
        return Err(invalid("resize needs non-empty shapes"));
    }
    let (mz, my, mx) = (
        interp::nearest_map(d.z, target.z),
        interp::nearest_map(d.y, target.y),
        interp::nearest_map(d.x, target.x),
    );
    Ok(Grid::from_fn(target, |z, y, x| u8::from(mask.get(mz[z], my[y], mx[x]) != 0)))
}

pub const VARIANCE_FLOOR: f64 = 1e-8;

/// Zero-mean, unit-variance (population) rescaling. A volume whose variance
/// falls below [`VARIANCE_FLOOR`] maps to zeros and the flag is set.
pub fn normalize(volume: &Volume) -> (Volume, bool) {
    let n = volume.data().len().max(1) as f64;
    let mean = volume.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = volume
        .data()
        .iter()
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    if var < VARIANCE_FLOOR {
        return (volume.map(|_| 0.0), true);
    }
    let inv = 1.0 / var.sqrt();
    (volume.map(|v| ((v as f64 - mean) * inv) as f32), false)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlipAxis {
    X,
    Y,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentSpec {
    pub enabled: bool,
    /// Maximum in-plane rotation about the z axis, degrees.
    pub rotation_max_deg: f64,
    /// In-plane scale factor range.
    pub scale_range: [f64; 2],
    pub flip_axes: Vec<FlipAxis>,
    pub intensity_scale_range: [f64; 2],
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec {
            enabled: true,
            rotation_max_deg: 15.0,
            scale_range: [0.9, 1.1],
            flip_axes: vec![FlipAxis::X, FlipAxis::Y],
            intensity_scale_range: [0.9, 1.1],
        }
    }
}

impl AugmentSpec {
    pub fn disabled() -> Self {
        AugmentSpec {
            enabled: false,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [a, b] = self.scale_range;
        if !(a > 0.0 && a <= b && b < 2.0) {
            return Err(config("scale_range must lie inside (0, 2)"));
        }
        let [c, d] = self.intensity_scale_range;
        if !(c > 0.0 && c <= d) {
            return Err(config("intensity_scale_range must be positive and ordered"));
        }
        if !(self.rotation_max_deg >= 0.0) {
            return Err(config("rotation_max_deg must be >= 0"));
        }
        Ok(())
    }
}

/// Concrete draw of augmentation parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentDraw {
    pub angle_rad: f64,
    pub scale: f64,
    pub flip_x: bool,
    pub flip_y: bool,
    pub intensity: f64,
}

impl AugmentDraw {
    pub const IDENTITY: AugmentDraw = AugmentDraw {
        angle_rad: 0.0,
        scale: 1.0,
        flip_x: false,
        flip_y: false,
        intensity: 1.0,
    };

    pub fn sample(spec: &AugmentSpec, seed: u64) -> AugmentDraw {
        if !spec.enabled {
            return AugmentDraw::IDENTITY;
        }
        let mut rng = rng_for(seed, 0x4155_4731);
        let max = spec.rotation_max_deg.to_radians();
        let angle_rad = if max > 0.0 { rng.random_range(-max..=max) } else { 0.0 };
        let draw = |rng: &mut rand_chacha::ChaCha8Rng, [a, b]: [f64; 2]| {
            if b > a {
                rng.random_range(a..=b)
            } else {
                a
            }
        };
        let scale = draw(&mut rng, spec.scale_range);
        let flip_x = rng.random_bool(0.5) && spec.flip_axes.contains(&FlipAxis::X);
        let flip_y = rng.random_bool(0.5) && spec.flip_axes.contains(&FlipAxis::Y);
        let intensity = draw(&mut rng, spec.intensity_scale_range);
        AugmentDraw {
            angle_rad,
            scale,
            flip_x,
            flip_y,
            intensity,
        }
    }
}

pub fn flip<T: Copy>(grid: &Grid<T>, axis: FlipAxis) -> Grid<T> {
    let d = grid.dims();
    Grid::from_fn(d, |z, y, x| match axis {
        FlipAxis::X => grid.get(z, y, d.x - 1 - x),
        FlipAxis::Y => grid.get(z, d.y - 1 - y, x),
    })
}

/// Apply one geometric draw to a volume and mask pair. Rotation and scaling
/// act in-plane about the slice center; out-of-bounds volume samples take the
/// volume minimum and mask samples are background.
pub fn apply_draw(volume: &Volume, mask: &Mask, draw: &AugmentDraw) -> (Volume, Mask) {
    let d = volume.dims();
    let mut vol = volume.clone();
    let mut msk = mask.clone();
    if draw.angle_rad != 0.0 || draw.scale != 1.0 {
        let fill = volume.min_value();
        let (cy, cx) = ((d.y as f64 - 1.0) / 2.0, (d.x as f64 - 1.0) / 2.0);
        let (s, c) = draw.angle_rad.sin_cos();
        let inv = 1.0 / draw.scale;
        let src = |y: usize, x: usize| {
            let (dy, dx) = (y as f64 - cy, x as f64 - cx);
            (cy + inv * (-s * dx + c * dy), cx + inv * (c * dx + s * dy))
        };
        vol = Grid::from_fn(d, |z, y, x| {
            let (sy, sx) = src(y, x);
            bilinear(volume, z, sy, sx).unwrap_or(fill)
        });
        msk = Grid::from_fn(d, |z, y, x| {
            let (sy, sx) = src(y, x);
            let (ry, rx) = (sy.round(), sx.round());
            if ry < 0.0 || rx < 0.0 || ry > (d.y - 1) as f64 || rx > (d.x - 1) as f64 {
                0
            } else {
                u8::from(mask.get(z, ry as usize, rx as usize) > 0)
            }
        });
    }
    if draw.flip_x {
        vol = flip(&vol, FlipAxis::X);
        msk = flip(&msk, FlipAxis::X);
    }
    if draw.flip_y {
        vol = flip(&vol, FlipAxis::Y);
        msk = flip(&msk, FlipAxis::Y);
    }
    if draw.intensity != 1.0 {
        let k = draw.intensity as f32;
        vol = vol.map(|v| v * k);
    }
    (vol, msk)
}

fn bilinear(v: &Volume, z: usize, y: f64, x: f64) -> Option<f32> {
    let d = v.dims();
    let eps = 1e-9;
    if y < -eps || x < -eps || y > (d.y - 1) as f64 + eps || x > (d.x - 1) as f64 + eps {
        return None;
    }
    let y = y.clamp(0.0, (d.y - 1) as f64);
    let x = x.clamp(0.0, (d.x - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(d.y - 1), (x0 + 1).min(d.x - 1));
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let val = (1.0 - fy) * ((1.0 - fx) * v.get(z, y0, x0) as f64 + fx * v.get(z, y0, x1) as f64)
        + fy * ((1.0 - fx) * v.get(z, y1, x0) as f64 + fx * v.get(z, y1, x1) as f64);
    Some(val as f32)
}

/// Seeded random augmentation of a volume/mask pair.
pub fn augment(volume: &Volume, mask: &Mask, spec: &AugmentSpec, seed: u64) -> Result<(Volume, Mask)> {
    if volume.dims() != mask.dims() {
        return Err(invalid("volume and mask must share a shape"));
    }
    let draw = AugmentDraw::sample(spec, seed);
    Ok(apply_draw(volume, mask, &draw))
}
