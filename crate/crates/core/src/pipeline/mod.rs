//! The two-step procedure (segmentation teacher, pseudo masks, joint student)
//! and every baseline and ablation training mode.

pub mod data;
pub mod pseudo;
pub mod run;
pub mod train;

use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::losses::{LossConfig, ObjectiveWeights, PromptSet};
use crate::model::{BackboneConfig, HeadSet, ModelConfig};
use crate::nn::conv::PadMode;
use crate::preprocess::{AugmentSpec, RoiSpec};
use crate::util::sha256_hex;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            warmup_epochs: 5,
            lr: 5e-4,
            weight_decay: 1e-4,
            batch_size: 6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(config("epochs must be >= 1"));
        }
        if self.warmup_epochs >= self.epochs {
            return Err(config(format!(
                "warmup_epochs ({}) must be below epochs ({})",
                self.warmup_epochs, self.epochs
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(config("lr must be positive"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(config("weight_decay must be >= 0"));
        }
        if self.batch_size == 0 {
            return Err(config("batch_size must be >= 1"));
        }
        Ok(())
    }
}

/// Linear warm-up from 0 to `lr0`, then cosine decay to 0 at `total`.
pub fn lr_schedule(step: usize, total: usize, warmup: usize, lr0: f64) -> f64 {
    let step = step.min(total);
    if step < warmup {
        return lr0 * step as f64 / warmup as f64;
    }
    if total <= warmup {
        return lr0;
    }
    let p = (step - warmup) as f64 / (total - warmup) as f64;
    lr0 * 0.5 * (1.0 + (std::f64::consts::PI * p).cos())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Segmentation plus text loss on fully annotated records.
    Teacher,
    /// Segmentation, detection and text loss on every train record, with
    /// pseudo masks for weak records.
    Student,
    /// Detection head only, every train record, no masks.
    WeakOnlyClassifier,
    /// Segmentation plus detection on fully annotated records.
    FullySupervised,
    /// Same objective as `FullySupervised`; the joint base model of the
    /// head ablation.
    JointNoText,
    /// Segmentation, detection and a standard location classifier.
    MultitaskClsLoc,
    /// Segmentation plus detection on every train record with pseudo masks.
    PandaLikeWssl,
    /// Detection classifier on the fully annotated records' labels.
    DetOnly,
    /// Location classifier on the fully annotated records' labels.
    LocOnly,
    /// Segmentation plus a standard location classifier.
    SegLoc,
    /// Segmentation, detection and text loss on fully annotated records.
    JointText,
}

impl Mode {
    pub const ALL: [Mode; 11] = [
        Mode::Teacher,
        Mode::Student,
        Mode::WeakOnlyClassifier,
        Mode::FullySupervised,
        Mode::JointNoText,
        Mode::MultitaskClsLoc,
        Mode::PandaLikeWssl,
        Mode::DetOnly,
        Mode::LocOnly,
        Mode::SegLoc,
        Mode::JointText,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Teacher => "teacher",
            Mode::Student => "student",
            Mode::WeakOnlyClassifier => "weak_only_classifier",
            Mode::FullySupervised => "fully_supervised",
            Mode::JointNoText => "joint_no_text",
            Mode::MultitaskClsLoc => "multitask_cls_loc",
            Mode::PandaLikeWssl => "panda_like_wssl",
            Mode::DetOnly => "det_only",
            Mode::LocOnly => "loc_only",
            Mode::SegLoc => "seg_loc",
            Mode::JointText => "joint_text",
        }
    }

    pub fn needs_pseudo_masks(self) -> bool {
        self.spec(&LossConfig::default(), PromptSet::DetLoc).scope == DataScope::AllWithPseudo
    }

    /// Heads, objective, data and model-selection rule of this mode.
    pub fn spec(self, loss: &LossConfig, prompts: PromptSet) -> TrainSpec {
        let text_weight = |w: f64| (w > 0.0 && prompts != PromptSet::None).then_some(w);
        let (seg, det, loc_cls, text, scope) = match self {
            Mode::Teacher => (Some(1.0), None, None, text_weight(loss.lambda), DataScope::FullOnly),
            Mode::Student => (Some(1.0), Some(loss.beta), None, text_weight(loss.alpha), DataScope::AllWithPseudo),
            Mode::WeakOnlyClassifier => (None, Some(1.0), None, None, DataScope::AllLabelsOnly),
            Mode::FullySupervised | Mode::JointNoText => (Some(1.0), Some(loss.beta), None, None, DataScope::FullOnly),
            Mode::MultitaskClsLoc => (Some(1.0), Some(loss.beta), Some(loss.beta), None, DataScope::FullOnly),
            Mode::PandaLikeWssl => (Some(1.0), Some(loss.beta), None, None, DataScope::AllWithPseudo),
            Mode::DetOnly => (None, Some(1.0), None, None, DataScope::FullLabelsOnly),
            Mode::LocOnly => (None, None, Some(1.0), None, DataScope::FullLabelsOnly),
            Mode::SegLoc => (Some(1.0), None, Some(loss.beta), None, DataScope::FullOnly),
            Mode::JointText => (Some(1.0), Some(loss.beta), None, text_weight(loss.alpha), DataScope::FullOnly),
        };
        let prompts = if text.is_some() { prompts } else { PromptSet::None };
        TrainSpec {
            heads: HeadSet {
                seg: seg.is_some(),
                det: det.is_some(),
                loc: loc_cls.is_some(),
                text: text.is_some(),
            },
            weights: ObjectiveWeights {
                seg,
                det,
                loc_cls,
                text,
                prompts,
            },
            scope,
            select: if self == Mode::Teacher {
                Selection::ValDice
            } else {
                Selection::ValAuc
            },
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| config(format!("unknown mode `{s}`")))
    }
}

/// Which train records a mode uses, and with which masks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataScope {
    /// Fully annotated records with their masks.
    FullOnly,
    /// Fully annotated records' weak labels only.
    FullLabelsOnly,
    /// Every record: true masks for full records, pseudo masks for weak ones.
    AllWithPseudo,
    /// Every record's weak labels only.
    AllLabelsOnly,
}

impl DataScope {
    pub fn uses_masks(self) -> bool {
        matches!(self, DataScope::FullOnly | DataScope::AllWithPseudo)
    }

    pub fn uses_weak_records(self) -> bool {
        matches!(self, DataScope::AllWithPseudo | DataScope::AllLabelsOnly)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    ValDice,
    ValAuc,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    pub heads: HeadSet,
    pub weights: ObjectiveWeights,
    pub scope: DataScope,
    pub select: Selection,
}

/// Architecture settings shared by every model of an experiment. The input
/// shape comes from the ROI target shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub stages: usize,
    pub base_channels: usize,
    pub det_channels: usize,
    pub text_dim: usize,
    pub aggregate_shape: Option<[usize; 3]>,
    pub normalize_text: bool,
    pub padding: PadMode,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            stages: 4,
            base_channels: 8,
            det_channels: 64,
            text_dim: 768,
            aggregate_shape: None,
            normalize_text: true,
            padding: PadMode::Zero,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub full_fraction: f64,
    /// Seed of the full/weak split; the experiment seed when unset.
    pub supervision_seed: Option<u64>,
    pub roi: RoiSpec,
    pub augment: AugmentSpec,
    pub network: NetworkConfig,
    pub loss: LossConfig,
    /// Schedule of the teacher and of every mode trained on the fully
    /// annotated records only.
    pub teacher: TrainConfig,
    /// Schedule of every mode trained on all train records.
    pub student: TrainConfig,
    pub teacher_prompts: PromptSet,
    pub student_prompts: PromptSet,
    pub pseudo_threshold: f64,
    /// Drop pseudo-mask components outside the reported location bin.
    pub bosma_filter: bool,
    /// Embedding table; the built-in pseudo encoder when unset.
    pub embeddings: Option<PathBuf>,
    /// Record every dataset file read to `logs/audit.jsonl`.
    pub audit: bool,
    /// After training, score the teacher on the weak train records' hidden
    /// masks. Runs as a separate audited phase.
    pub analyze_weak_dice: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            full_fraction: 0.3,
            supervision_seed: None,
            roi: RoiSpec::default(),
            augment: AugmentSpec::default(),
            network: NetworkConfig::default(),
            loss: LossConfig::default(),
            teacher: TrainConfig::default(),
            student: TrainConfig::default(),
            teacher_prompts: PromptSet::DetLoc,
            student_prompts: PromptSet::DetLoc,
            pseudo_threshold: 0.5,
            bosma_filter: false,
            embeddings: None,
            audit: false,
            analyze_weak_dice: true,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: ExperimentConfig = serde_json::from_str(text).map_err(|e| config(format!("config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.full_fraction > 0.0 && self.full_fraction <= 1.0) {
            return Err(config(format!(
                "full_fraction must lie in (0, 1], got {}",
                self.full_fraction
            )));
        }
        if !(0.0..=1.0).contains(&self.pseudo_threshold) {
            return Err(config("pseudo_threshold must lie in [0, 1]"));
        }
        self.roi.validate(self.network.stages)?;
        self.augment.validate()?;
        self.loss.validate()?;
        self.teacher.validate()?;
        self.student.validate()?;
        self.model_config(HeadSet::default()).validate()
    }

    pub fn supervision_seed(&self) -> u64 {
        self.supervision_seed.unwrap_or(self.seed)
    }

    pub fn model_config(&self, heads: HeadSet) -> ModelConfig {
        let n = &self.network;
        ModelConfig {
            backbone: BackboneConfig {
                stages: n.stages,
                base_channels: n.base_channels,
                input_shape: self.roi.target_shape,
                padding: n.padding,
            },
            heads,
            det_channels: n.det_channels,
            text_dim: n.text_dim,
            aggregate_shape: n.aggregate_shape,
            normalize_text: n.normalize_text,
            temp_init: self.loss.temp_init,
            seed: self.seed,
        }
    }

    /// sha256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let v = serde_json::to_value(self).expect("config serializes");
        sha256_hex(v.to_string().as_bytes())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}
