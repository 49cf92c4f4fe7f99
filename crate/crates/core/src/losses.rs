//! Training objectives and their analytic gradients, evaluated in f64.
//!
//! Segmentation logits are channel-major `[background..., foreground...]`
//! over N voxels. Every loss here is per sample; batch reduction (a mean) is
//! done by the caller.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::text::TextMatrices;

pub const TEMP_MIN: f64 = 1e-3;
pub const TEMP_MAX: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Text-loss weight in the teacher objective.
    pub lambda: f64,
    /// Text-loss weight in the student objective.
    pub alpha: f64,
    /// Detection-loss weight in the joint objective.
    pub beta: f64,
    pub dice_smooth: f64,
    pub temp_init: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 0.01,
            alpha: 0.01,
            beta: 0.1,
            dice_smooth: 1e-5,
            temp_init: 0.07,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if [self.lambda, self.alpha, self.beta, self.dice_smooth]
            .iter()
            .any(|w| !(*w >= 0.0 && w.is_finite()))
        {
            return Err(crate::error::config("loss weights must be finite and >= 0"));
        }
        if !(self.temp_init >= TEMP_MIN && self.temp_init <= TEMP_MAX) {
            return Err(crate::error::config(format!(
                "temp_init must lie in [{TEMP_MIN}, {TEMP_MAX}]"
            )));
        }
        Ok(())
    }
}

/// Learnable temperatures stored as logarithms, so `T = exp(log_t) > 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Temperatures {
    pub log_t_loc: f64,
    pub log_t_det: f64,
}

impl Temperatures {
    pub fn new(t_loc: f64, t_det: f64) -> Self {
        let mut t = Temperatures {
            log_t_loc: t_loc.ln(),
            log_t_det: t_det.ln(),
        };
        t.clamp();
        t
    }

    pub fn t_loc(&self) -> f64 {
        self.log_t_loc.exp()
    }

    pub fn t_det(&self) -> f64 {
        self.log_t_det.exp()
    }

    pub fn clamp(&mut self) {
        self.log_t_loc = clamp_log_t(self.log_t_loc);
        self.log_t_det = clamp_log_t(self.log_t_det);
    }
}

pub fn clamp_log_t(log_t: f64) -> f64 {
    log_t.clamp(TEMP_MIN.ln(), TEMP_MAX.ln())
}

/// Which text prompts feed the text-guided loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptSet {
    None,
    Det,
    Loc,
    DetLoc,
}

impl PromptSet {
    pub fn uses_det(self) -> bool {
        matches!(self, PromptSet::Det | PromptSet::DetLoc)
    }

    pub fn uses_loc(self) -> bool {
        matches!(self, PromptSet::Loc | PromptSet::DetLoc)
    }
}

fn check_probs(probs: &[f64], mask: &[u8]) -> Result<()> {
    if probs.len() != mask.len() {
        return Err(invalid(format!(
            "prob map has {} voxels, mask has {}",
            probs.len(),
            mask.len()
        )));
    }
    Ok(())
}

/// `1 - (2 sum(p m) + eps) / (sum(p) + sum(m) + eps)`.
pub fn dice_loss(probs: &[f64], mask: &[u8], smooth: f64) -> Result<f64> {
    Ok(dice_loss_grad(probs, mask, smooth)?.0)
}

/// Dice loss and its gradient with respect to the probabilities.
pub fn dice_loss_grad(probs: &[f64], mask: &[u8], smooth: f64) -> Result<(f64, Vec<f64>)> {
    check_probs(probs, mask)?;
    let mut inter = 0.0;
    let mut psum = 0.0;
    let mut msum = 0.0;
    for (&p, &m) in probs.iter().zip(mask) {
        let m = (m != 0) as u8 as f64;
        inter += p * m;
        psum += p;
        msum += m;
    }
    let num = 2.0 * inter + smooth;
    let den = psum + msum + smooth;
    let loss = 1.0 - num / den;
    let grad = mask
        .iter()
        .map(|&m| {
            let m = (m != 0) as u8 as f64;
            -(2.0 * m * den - num) / (den * den)
        })
        .collect();
    Ok((loss, grad))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegLossOut {
    pub value: f64,
    pub ce: f64,
    pub dice: f64,
    /// Gradient with respect to the channel-major logits.
    pub grad: Vec<f64>,
}

/// Foreground probabilities from channel-major two-class logits.
pub fn foreground_probs(logits: &[f64]) -> Vec<f64> {
    let n = logits.len() / 2;
    (0..n).map(|v| sigmoid(logits[n + v] - logits[v])).collect()
}

/// Mean per-voxel two-class cross-entropy plus Dice on the foreground
/// softmax channel, equally weighted.
pub fn seg_loss(logits: &[f64], mask: &[u8], smooth: f64) -> Result<SegLossOut> {
    if logits.len() != 2 * mask.len() {
        return Err(invalid(format!(
            "segmentation logits have {} values for {} voxels",
            logits.len(),
            mask.len()
        )));
    }
    let n = mask.len();
    let nf = n as f64;
    let probs = foreground_probs(logits);
    let mut ce = 0.0;
    for v in 0..n {
        let d = logits[n + v] - logits[v];
        // -log p_y with p_fg = sigmoid(d)
        ce += if mask[v] != 0 { softplus(-d) } else { softplus(d) };
    }
    ce /= nf;
    let (dice, dgrad) = dice_loss_grad(&probs, mask, smooth)?;
    let mut grad = vec![0.0; 2 * n];
    for v in 0..n {
        let p = probs[v];
        let y = (mask[v] != 0) as u8 as f64;
        let g_fg = (p - y) / nf + dgrad[v] * p * (1.0 - p);
        grad[n + v] = g_fg;
        grad[v] = -g_fg;
    }
    Ok(SegLossOut {
        value: ce + dice,
        ce,
        dice,
        grad,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CeOut {
    pub value: f64,
    pub probs: Vec<f64>,
    pub grad: Vec<f64>,
}

/// Softmax cross-entropy of `logits` against a one-hot `label`.
pub fn softmax_ce(logits: &[f64], label: usize) -> Result<CeOut> {
    if label >= logits.len() {
        return Err(invalid(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let probs = softmax(logits);
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    let value = lse - logits[label];
    let mut grad = probs.clone();
    grad[label] -= 1.0;
    Ok(CeOut { value, probs, grad })
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Two-class cross-entropy for the detection head.
pub fn det_loss(det_logits: &[f64; 2], diagnosis: u8) -> Result<CeOut> {
    if diagnosis > 1 {
        return Err(invalid(format!("diagnosis must be 0 or 1, got {diagnosis}")));
    }
    softmax_ce(det_logits, diagnosis as usize)
}

/// Dot products of `i` with each row of the row-major `rows x i.len()` matrix.
pub fn similarity(i: &[f64], e: &[f64]) -> Result<Vec<f64>> {
    let d = i.len();
    if d == 0 || !e.len().is_multiple_of(d) {
        return Err(invalid(format!(
            "feature of length {d} does not match text matrix of {} values",
            e.len()
        )));
    }
    Ok(e.chunks_exact(d)
        .map(|row| row.iter().zip(i).map(|(a, b)| a * b).sum())
        .collect())
}

/// `exp(s_k / T) / sum_j exp(s_j / T)`, max-shifted.
pub fn temperature_softmax(s: &[f64], t: f64) -> Result<Vec<f64>> {
    if !(t > 0.0) {
        return Err(invalid(format!("temperature must be positive, got {t}")));
    }
    let z: Vec<f64> = s.iter().map(|&v| v / t).collect();
    Ok(softmax(&z))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TextBranchOut {
    pub value: f64,
    pub sims: Vec<f64>,
    pub probs: Vec<f64>,
    pub grad_i: Vec<f64>,
    pub grad_log_t: f64,
}

/// Cross-entropy of temperature-scaled similarities against a one-hot label.
pub fn text_branch_loss(i: &[f64], e: &[f64], label: usize, log_t: f64) -> Result<TextBranchOut> {
    let sims = similarity(i, e)?;
    if label >= sims.len() {
        return Err(invalid(format!(
            "label {label} out of range for {} text rows",
            sims.len()
        )));
    }
    let t = log_t.exp();
    let z: Vec<f64> = sims.iter().map(|&s| s / t).collect();
    let ce = softmax_ce(&z, label)?;
    let d = i.len();
    let mut grad_i = vec![0.0; d];
    let mut grad_log_t = 0.0;
    for (k, row) in e.chunks_exact(d).enumerate() {
        let g = ce.grad[k];
        for (gi, &ek) in grad_i.iter_mut().zip(row) {
            *gi += g * ek / t;
        }
        grad_log_t -= g * z[k];
    }
    Ok(TextBranchOut {
        value: ce.value,
        sims,
        probs: ce.probs,
        grad_i,
        grad_log_t,
    })
}

pub fn text_loc_loss(i_loc: &[f64], e_loc: &[f64], location: u8, log_t_loc: f64) -> Result<TextBranchOut> {
    text_branch_loss(i_loc, e_loc, location as usize, log_t_loc)
}

pub fn text_det_loss(i_det: &[f64], e_det: &[f64], diagnosis: u8, log_t_det: f64) -> Result<TextBranchOut> {
    text_branch_loss(i_det, e_det, diagnosis as usize, log_t_det)
}

/// Projected image features from the two text projectors.
#[derive(Clone, Debug, PartialEq)]
pub struct TextFeatures {
    pub i_det: Vec<f64>,
    pub i_loc: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeakLabels {
    pub diagnosis: u8,
    pub location: u8,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TextLossOut {
    pub value: f64,
    pub loc: Option<TextBranchOut>,
    pub det: Option<TextBranchOut>,
}

/// Sum of the location and diagnosis text losses selected by `prompts`.
pub fn text_loss(
    feats: &TextFeatures,
    mats: &TextMatrices,
    labels: WeakLabels,
    temps: &Temperatures,
    prompts: PromptSet,
) -> Result<TextLossOut> {
    let loc = if prompts.uses_loc() {
        Some(text_loc_loss(&feats.i_loc, &mats.e_loc, labels.location, temps.log_t_loc)?)
    } else {
        None
    };
    let det = if prompts.uses_det() {
        Some(text_det_loss(&feats.i_det, &mats.e_det, labels.diagnosis, temps.log_t_det)?)
    } else {
        None
    };
    let value = loc.as_ref().map_or(0.0, |l| l.value) + det.as_ref().map_or(0.0, |d| d.value);
    Ok(TextLossOut { value, loc, det })
}

/// Head outputs of one sample, in f64, as consumed by the objectives.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct HeadValues {
    pub seg_logits: Option<Vec<f64>>,
    pub det_logits: Option<[f64; 2]>,
    pub loc_logits: Option<Vec<f64>>,
    pub text: Option<TextFeatures>,
}

/// Gradients of a scalar objective with respect to each head output.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct HeadGrads {
    pub seg_logits: Option<Vec<f64>>,
    pub det_logits: Option<[f64; 2]>,
    pub loc_logits: Option<Vec<f64>>,
    pub i_det: Option<Vec<f64>>,
    pub i_loc: Option<Vec<f64>>,
    pub log_t_loc: f64,
    pub log_t_det: f64,
}

impl HeadGrads {
    /// Multiply every gradient by `f`, e.g. `1 / batch_size`.
    pub fn scale(&mut self, f: f64) {
        for v in [&mut self.seg_logits, &mut self.loc_logits, &mut self.i_det, &mut self.i_loc]
            .into_iter()
            .flatten()
        {
            v.iter_mut().for_each(|g| *g *= f);
        }
        if let Some(d) = &mut self.det_logits {
            d.iter_mut().for_each(|g| *g *= f);
        }
        self.log_t_loc *= f;
        self.log_t_det *= f;
    }
}

/// Term weights of a composite objective. `None` drops the term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveWeights {
    pub seg: Option<f64>,
    pub det: Option<f64>,
    pub loc_cls: Option<f64>,
    pub text: Option<f64>,
    pub prompts: PromptSet,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub seg: f64,
    pub det: f64,
    pub loc_cls: f64,
    pub text_loc: f64,
    pub text_det: f64,
}

impl LossParts {
    pub fn add_scaled(&mut self, o: &LossParts, f: f64) {
        self.total += f * o.total;
        self.seg += f * o.seg;
        self.det += f * o.det;
        self.loc_cls += f * o.loc_cls;
        self.text_loc += f * o.text_loc;
        self.text_det += f * o.text_det;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveOut {
    pub parts: LossParts,
    pub grads: HeadGrads,
}

/// Sample-level targets. `mask` is the (true or pseudo) tumor mask, if any.
#[derive(Clone, Copy, Debug)]
pub struct Targets<'a> {
    pub mask: Option<&'a [u8]>,
    pub labels: WeakLabels,
}

/// Weighted sum of the enabled terms, with gradients for every head used.
pub fn objective(
    heads: &HeadValues,
    targets: Targets<'_>,
    mats: Option<&TextMatrices>,
    temps: &Temperatures,
    weights: &ObjectiveWeights,
    dice_smooth: f64,
) -> Result<ObjectiveOut> {
    let mut parts = LossParts::default();
    let mut grads = HeadGrads::default();

    if let Some(w) = weights.seg {
        let logits = heads
            .seg_logits
            .as_ref()
            .ok_or_else(|| invalid("segmentation term needs segmentation logits"))?;
        let mask = targets
            .mask
            .ok_or_else(|| invalid("segmentation term needs a tumor mask"))?;
        let out = seg_loss(logits, mask, dice_smooth)?;
        parts.seg = out.value;
        parts.total += w * out.value;
        grads.seg_logits = Some(out.grad.into_iter().map(|g| w * g).collect());
    }
    if let Some(w) = weights.det {
        let logits = heads
            .det_logits
            .ok_or_else(|| invalid("detection term needs detection logits"))?;
        let out = det_loss(&logits, targets.labels.diagnosis)?;
        parts.det = out.value;
        parts.total += w * out.value;
        grads.det_logits = Some([w * out.grad[0], w * out.grad[1]]);
    }
    if let Some(w) = weights.loc_cls {
        let logits = heads
            .loc_logits
            .as_ref()
            .ok_or_else(|| invalid("location term needs location logits"))?;
        let out = softmax_ce(logits, targets.labels.location as usize)?;
        parts.loc_cls = out.value;
        parts.total += w * out.value;
        grads.loc_logits = Some(out.grad.into_iter().map(|g| w * g).collect());
    }
    if let (Some(w), true) = (weights.text, weights.prompts != PromptSet::None) {
        let feats = heads
            .text
            .as_ref()
            .ok_or_else(|| invalid("text term needs projected features"))?;
        let mats = mats.ok_or_else(|| invalid("text term needs text matrices"))?;
        let out = text_loss(feats, mats, targets.labels, temps, weights.prompts)?;
        parts.total += w * out.value;
        if let Some(l) = out.loc {
            parts.text_loc = l.value;
            grads.i_loc = Some(l.grad_i.iter().map(|g| w * g).collect());
            grads.log_t_loc = w * l.grad_log_t;
        }
        if let Some(d) = out.det {
            parts.text_det = d.value;
            grads.i_det = Some(d.grad_i.iter().map(|g| w * g).collect());
            grads.log_t_det = w * d.grad_log_t;
        }
    }
    Ok(ObjectiveOut { parts, grads })
}

impl ObjectiveWeights {
    /// `L_seg + lambda * L_text`.
    pub fn teacher(cfg: &LossConfig, prompts: PromptSet) -> Self {
        ObjectiveWeights {
            seg: Some(1.0),
            det: None,
            loc_cls: None,
            text: Some(cfg.lambda),
            prompts,
        }
    }

    /// `L_seg + beta * L_det`.
    pub fn joint(cfg: &LossConfig) -> Self {
        ObjectiveWeights {
            seg: Some(1.0),
            det: Some(cfg.beta),
            loc_cls: None,
            text: None,
            prompts: PromptSet::None,
        }
    }

    /// `L_joint + alpha * L_text`.
    pub fn student(cfg: &LossConfig, prompts: PromptSet) -> Self {
        ObjectiveWeights {
            text: Some(cfg.alpha),
            prompts,
            ..ObjectiveWeights::joint(cfg)
        }
    }
}

/// Teacher objective `L_seg + lambda * L_text` for one sample.
pub fn teacher_loss(
    seg_logits: &[f64],
    mask: &[u8],
    feats: &TextFeatures,
    mats: &TextMatrices,
    labels: WeakLabels,
    temps: &Temperatures,
    cfg: &LossConfig,
) -> Result<ObjectiveOut> {
    let heads = HeadValues {
        seg_logits: Some(seg_logits.to_vec()),
        text: Some(feats.clone()),
        ..Default::default()
    };
    let targets = Targets { mask: Some(mask), labels };
    objective(
        &heads,
        targets,
        Some(mats),
        temps,
        &ObjectiveWeights::teacher(cfg, PromptSet::DetLoc),
        cfg.dice_smooth,
    )
}

/// Joint objective `L_seg + beta * L_det` for one sample.
pub fn joint_loss(
    seg_logits: &[f64],
    mask: &[u8],
    det_logits: &[f64; 2],
    diagnosis: u8,
    cfg: &LossConfig,
) -> Result<ObjectiveOut> {
    let heads = HeadValues {
        seg_logits: Some(seg_logits.to_vec()),
        det_logits: Some(*det_logits),
        ..Default::default()
    };
    let targets = Targets {
        mask: Some(mask),
        labels: WeakLabels { diagnosis, location: 0 },
    };
    objective(
        &heads,
        targets,
        None,
        &Temperatures::new(1.0, 1.0),
        &ObjectiveWeights::joint(cfg),
        cfg.dice_smooth,
    )
}

/// Student objective `L_joint + alpha * L_text` for one sample.
#[allow(clippy::too_many_arguments)]
pub fn student_loss(
    seg_logits: &[f64],
    mask: &[u8],
    det_logits: &[f64; 2],
    feats: &TextFeatures,
    mats: &TextMatrices,
    labels: WeakLabels,
    temps: &Temperatures,
    cfg: &LossConfig,
) -> Result<ObjectiveOut> {
    let heads = HeadValues {
        seg_logits: Some(seg_logits.to_vec()),
        det_logits: Some(*det_logits),
        text: Some(feats.clone()),
        ..Default::default()
    };
    let targets = Targets { mask: Some(mask), labels };
    objective(
        &heads,
        targets,
        Some(mats),
        temps,
        &ObjectiveWeights::student(cfg, PromptSet::DetLoc),
        cfg.dice_smooth,
    )
}
