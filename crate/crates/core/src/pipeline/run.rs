//! Run directories, stage orchestration, baselines and ablation grids.
//!
//! Layout of a run directory:
//!
//! ```text
//! config.json            resolved config and its hash
//! checkpoints/*.ckpt
//! pseudo_masks/          <id>.u8, <id>.prob.f32, provenance.json
//! logs/metrics.csv       per-epoch train loss and val metrics
//! logs/audit.jsonl       dataset files opened, by phase (audit mode)
//! report.json
//! scores_val.json, scores_test.json, roc.csv
//! ```

use std::cell::{Cell, RefCell};
use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::data::{load_samples, MaskSource, Sample};
use super::pseudo::{generate_pseudo_masks, PseudoLabelSet};
use super::train::{metrics_csv, predict, train, EpochLog, Predictions, TrainItem, TrainSetup, METRICS_HEADER};
use super::{DataScope, ExperimentConfig, Mode};
use crate::checkpoint::{self, CheckpointMeta, TextBuffers};
use crate::error::{config, Error, Result};
use crate::eval::{self, DiceSummary, EvalReport, ScoreSet};
use crate::io::{self, Audit};
use crate::losses::PromptSet;
use crate::model::Model;
use crate::phantom::{assign_supervision, Manifest, ManifestRecord, Split, Supervision};
use crate::preprocess::RoiSpec;
use crate::text::{assemble_text_matrices, load_embedding_table, LabelVocabulary, TextEmbeddingTable, TextMatrices};

pub const CONFIG_FILE: &str = "config.json";
pub const REPORT_FILE: &str = "report.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const PSEUDO_DIR: &str = "pseudo_masks";
pub const METRICS_FILE: &str = "logs/metrics.csv";
pub const AUDIT_FILE: &str = "logs/audit.jsonl";
pub const TEACHER_STAGE: &str = "teacher";

/// `config.json` of a run directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolvedConfig {
    pub config_hash: String,
    pub config: ExperimentConfig,
}

/// Text matrices from the configured embedding table, or from the built-in
/// pseudo encoder.
pub fn text_matrices(cfg: &ExperimentConfig) -> Result<TextMatrices> {
    let vocab = LabelVocabulary::default();
    let dim = cfg.network.text_dim;
    let table = match &cfg.embeddings {
        Some(p) => load_embedding_table(p, &vocab, Some(dim), true)?,
        None => TextEmbeddingTable::pseudo(&vocab, dim)?,
    };
    assemble_text_matrices(&table, &vocab)
}

/// A trained, saved model.
pub struct Trained {
    pub stage: String,
    pub model: Model<f32>,
    pub checkpoint: PathBuf,
    pub sha256: String,
    pub best_epoch: usize,
    pub best_metric: Option<f64>,
    pub final_loss: f64,
    pub n_train: usize,
}

impl Trained {
    pub fn summary(&self) -> StageSummary {
        StageSummary {
            stage: self.stage.clone(),
            checkpoint_sha256: self.sha256.clone(),
            best_epoch: self.best_epoch,
            best_metric: self.best_metric,
            final_loss: self.final_loss,
            n_train: self.n_train,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: String,
    pub checkpoint_sha256: String,
    pub best_epoch: usize,
    pub best_metric: Option<f64>,
    pub final_loss: f64,
    pub n_train: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoSummary {
    pub n_records: usize,
    pub n_empty: usize,
    pub threshold: f64,
    pub filter_applied: bool,
    pub provenance_hash: String,
}

impl From<&PseudoLabelSet> for PseudoSummary {
    fn from(p: &PseudoLabelSet) -> Self {
        PseudoSummary {
            n_records: p.records.len(),
            n_empty: p.records.values().filter(|e| e.foreground_voxels == 0).count(),
            threshold: p.threshold,
            filter_applied: p.filter_applied,
            provenance_hash: p.provenance_hash.clone(),
        }
    }
}

/// `report.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: Mode,
    pub seed: u64,
    pub full_fraction: f64,
    pub config_hash: String,
    pub teacher: Option<StageSummary>,
    /// Teacher Dice on the weak train records' hidden masks, computed after
    /// training in a separate audited phase.
    pub weak_teacher_dice: Option<DiceSummary>,
    pub pseudo: Option<PseudoSummary>,
    pub model: StageSummary,
    pub val: EvalReport,
    pub test: EvalReport,
}

impl RunReport {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// An experiment bound to a dataset and a run directory.
pub struct Experiment {
    pub data_dir: PathBuf,
    pub run_dir: PathBuf,
    pub cfg: ExperimentConfig,
    pub hash: String,
    pub manifest: Manifest,
    pub mats: TextMatrices,
    audit: Audit,
    audit_flushed: Cell<usize>,
    pending_logs: RefCell<Vec<EpochLog>>,
}

impl Experiment {
    /// Read the dataset, assign the full/weak split of the train records
    /// and write `config.json`.
    pub fn open(data_dir: &Path, run_dir: &Path, cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let manifest = Manifest::read(data_dir)?;
        let manifest = assign_supervision(&manifest, cfg.full_fraction, cfg.supervision_seed())?;
        let mats = text_matrices(&cfg)?;
        let hash = cfg.hash();
        let resolved = ResolvedConfig {
            config_hash: hash.clone(),
            config: cfg.clone(),
        };
        io::write_bytes(
            &run_dir.join(CONFIG_FILE),
            (serde_json::to_string_pretty(&resolved)? + "\n").as_bytes(),
        )?;
        let audit = if cfg.audit { Audit::enabled() } else { Audit::disabled() };
        Ok(Experiment {
            data_dir: data_dir.to_path_buf(),
            run_dir: run_dir.to_path_buf(),
            cfg,
            hash,
            manifest,
            mats,
            audit,
            audit_flushed: Cell::new(0),
            pending_logs: RefCell::new(Vec::new()),
        })
    }

    pub fn audit(&self) -> &Audit {
        &self.audit
    }

    pub fn pseudo_dir(&self) -> PathBuf {
        self.run_dir.join(PSEUDO_DIR)
    }

    pub fn checkpoint_path(&self, stage: &str) -> PathBuf {
        self.run_dir.join(CHECKPOINT_DIR).join(format!("{stage}.ckpt"))
    }

    fn records(&self, split: Split, sup: Option<Supervision>) -> Vec<&ManifestRecord> {
        self.manifest
            .split(split)
            .filter(|r| sup.is_none_or(|s| r.supervision == s))
            .collect()
    }

    fn load(&self, phase: &str, recs: Vec<&ManifestRecord>, masks: MaskSource) -> Result<Vec<Sample>> {
        self.audit.set_phase(phase);
        load_samples(&self.data_dir, recs, &self.cfg.roi, masks, &self.audit)
    }

    /// Train a model for `mode`. Modes that train on pseudo masks read them
    /// from `pseudo_dir`.
    pub fn train_mode(&self, mode: Mode, pseudo_dir: Option<&Path>) -> Result<Trained> {
        let stage = match mode {
            Mode::Teacher => TEACHER_STAGE,
            Mode::Student => "student",
            other => other.as_str(),
        };
        self.train_stage(stage, mode, pseudo_dir).map_err(|e| e.in_stage(stage))
    }

    pub fn train_teacher(&self) -> Result<Trained> {
        self.train_mode(Mode::Teacher, None)
    }

    fn train_stage(&self, stage: &str, mode: Mode, pseudo_dir: Option<&Path>) -> Result<Trained> {
        let cfg = &self.cfg;
        let prompts = if mode == Mode::Teacher {
            cfg.teacher_prompts
        } else {
            cfg.student_prompts
        };
        let spec = mode.spec(&cfg.loss, prompts);
        // Modes that see only the fully annotated subset share its schedule.
        let train_cfg = if spec.scope.uses_weak_records() {
            &cfg.student
        } else {
            &cfg.teacher
        };
        let phase = format!("train_{stage}");
        let full = self.records(Split::Train, Some(Supervision::Full));
        let weak = self.records(Split::Train, Some(Supervision::Weak));
        let mut samples = match spec.scope {
            DataScope::FullOnly => self.load(&phase, full, MaskSource::Visible)?,
            DataScope::FullLabelsOnly => self.load(&phase, full, MaskSource::None)?,
            DataScope::AllLabelsOnly => self.load(&phase, self.records(Split::Train, None), MaskSource::None)?,
            DataScope::AllWithPseudo => {
                let mut s = self.load(&phase, full, MaskSource::Visible)?;
                let mut w = self.load(&phase, weak, MaskSource::None)?;
                if !w.is_empty() {
                    let dir = pseudo_dir.ok_or_else(|| config("this mode needs pseudo masks"))?;
                    let set = PseudoLabelSet::read(dir)?;
                    let ids: Vec<&str> = w.iter().map(|s| s.id.as_str()).collect();
                    let mut masks = set.load_masks(dir, &ids, &self.audit)?;
                    for s in w.iter_mut() {
                        let m = masks.remove(&s.id).expect("loaded for every id");
                        if m.dims() != s.input.dims() {
                            return Err(Error::Schema(format!("pseudo mask for {} has the wrong shape", s.id)));
                        }
                        s.mask = Some(m);
                    }
                }
                s.append(&mut w);
                s
            }
        };
        if !spec.scope.uses_masks() {
            samples.iter_mut().for_each(|s| s.mask = None);
        }
        if mode == Mode::Teacher {
            let masks: Vec<usize> = samples.iter().filter_map(|s| s.mask.as_ref()).map(|m| m.count()).collect();
            if !masks.iter().any(|&c| c > 0) || !masks.contains(&0) {
                return Err(config("teacher needs full records with both empty and non-empty masks"));
            }
        }
        let val = self.load(&format!("val_{stage}"), self.records(Split::Val, None), MaskSource::Visible)?;
        let items: Vec<TrainItem<'_>> = samples.iter().map(TrainItem::from).collect();
        self.audit.set_phase(&phase);
        let setup = TrainSetup {
            stage,
            model: cfg.model_config(spec.heads),
            spec,
            train: train_cfg,
            loss: &cfg.loss,
            augment: &cfg.augment,
            mats: Some(&self.mats),
            seed: cfg.seed,
        };
        let out = train(&setup, &items, &val)?;
        let meta = CheckpointMeta {
            stage: stage.to_string(),
            epoch: out.best_epoch,
            config_hash: self.hash.clone(),
            metric: out.best_metric,
            model: out.model.cfg.clone(),
            roi: cfg.roi.clone(),
            text: spec.heads.text.then(|| TextBuffers::from(&self.mats)),
        };
        let path = self.checkpoint_path(stage);
        let sha256 = checkpoint::save(&path, &out.model, &meta)?;
        self.pending_logs.borrow_mut().extend(out.log);
        self.flush_logs()?;
        Ok(Trained {
            stage: stage.to_string(),
            model: out.model,
            checkpoint: path,
            sha256,
            best_epoch: out.best_epoch,
            best_metric: out.best_metric,
            final_loss: out.final_loss,
            n_train: samples.len(),
        })
    }

    /// Pseudo masks for every weak train record, written to the run's
    /// pseudo-mask directory.
    pub fn pseudo_label(&self, teacher: &Model<f32>, teacher_sha256: &str) -> Result<PseudoLabelSet> {
        let run = || {
            let weak = self.records(Split::Train, Some(Supervision::Weak));
            let samples = self.load("pseudo_label", weak, MaskSource::None)?;
            generate_pseudo_masks(
                teacher,
                teacher_sha256,
                &samples,
                self.cfg.pseudo_threshold,
                self.cfg.bosma_filter,
                &self.pseudo_dir(),
            )
        };
        let out = run().map_err(|e| e.in_stage("pseudo_label"));
        self.flush_audit()?;
        out
    }

    /// Evaluate a model on a split.
    pub fn evaluate(&self, model: &Model<f32>, split: Split) -> Result<(EvalReport, Predictions)> {
        let samples = self.load(&format!("eval_{}", split.as_str()), self.records(split, None), MaskSource::Visible)?;
        let out = report_for(model, &samples, Some(&self.mats), split.as_str(), &self.hash);
        self.flush_audit()?;
        out
    }

    /// Teacher Dice on the hidden masks of the weak train records.
    pub fn analyze_weak_dice(&self, teacher: &Model<f32>) -> Result<Option<DiceSummary>> {
        let weak = self.records(Split::Train, Some(Supervision::Weak));
        if weak.is_empty() {
            return Ok(None);
        }
        let samples = self.load("analysis", weak, MaskSource::Evaluation)?;
        let p = predict(teacher, &samples, None)?;
        self.flush_audit()?;
        Ok(Some(eval::summarize_dice(&p.dice)))
    }

    fn flush_logs(&self) -> Result<()> {
        let rows = std::mem::take(&mut *self.pending_logs.borrow_mut());
        let path = self.run_dir.join(METRICS_FILE);
        let text = if path.exists() {
            metrics_csv(&rows)[METRICS_HEADER.len() + 1..].to_string()
        } else {
            metrics_csv(&rows)
        };
        append(&path, &text)?;
        self.flush_audit()
    }

    fn flush_audit(&self) -> Result<()> {
        if !self.audit.is_enabled() {
            return Ok(());
        }
        let entries = self.audit.entries();
        let mut text = String::new();
        for e in &entries[self.audit_flushed.get()..] {
            text.push_str(&serde_json::to_string(e)?);
            text.push('\n');
        }
        self.audit_flushed.set(entries.len());
        append(&self.run_dir.join(AUDIT_FILE), &text)
    }

    /// Remove the logs of an earlier run in the same directory.
    pub fn reset_logs(&self) -> Result<()> {
        for f in [METRICS_FILE, AUDIT_FILE] {
            let p = self.run_dir.join(f);
            if p.exists() {
                std::fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
            }
        }
        Ok(())
    }

    /// Evaluate the selected model on val and test, write scores, ROC and
    /// `report.json`.
    pub fn finish(
        &self,
        mode: Mode,
        trained: &Trained,
        teacher: Option<StageSummary>,
        weak_teacher_dice: Option<DiceSummary>,
        pseudo: Option<PseudoSummary>,
    ) -> Result<RunReport> {
        let (val, pv) = self.evaluate(&trained.model, Split::Val)?;
        let (test, pt) = self.evaluate(&trained.model, Split::Test)?;
        write_outputs(&self.run_dir, &pv, &pt)?;
        let report = RunReport {
            mode,
            seed: self.cfg.seed,
            full_fraction: self.cfg.full_fraction,
            config_hash: self.hash.clone(),
            teacher,
            weak_teacher_dice,
            pseudo,
            model: trained.summary(),
            val,
            test,
        };
        io::write_bytes(&self.run_dir.join(REPORT_FILE), report.to_json()?.as_bytes())?;
        Ok(report)
    }
}

fn append(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

fn write_outputs(dir: &Path, val: &Predictions, test: &Predictions) -> Result<()> {
    for (name, p) in [("val", val), ("test", test)] {
        if let Some(Ok(s)) = p.score_set() {
            io::write_bytes(&dir.join(format!("scores_{name}.json")), s.to_json()?.as_bytes())?;
        }
    }
    if let Some(Ok(s)) = test.score_set() {
        if let Ok(roc) = eval::roc_curve(&s) {
            io::write_bytes(&dir.join("roc.csv"), eval::roc_csv(&roc).as_bytes())?;
        }
    }
    Ok(())
}

/// Metrics of `model` on `samples`. Detection metrics need a cancer score;
/// Dice needs segmentation output and sample masks.
pub fn report_for(
    model: &Model<f32>,
    samples: &[Sample],
    mats: Option<&TextMatrices>,
    split: &str,
    config_hash: &str,
) -> Result<(EvalReport, Predictions)> {
    let p = predict(model, samples, mats)?;
    let mut r = match p.score_set() {
        Some(s) => EvalReport::from_scores(split, &s?, config_hash)?,
        None => EvalReport {
            split: split.to_string(),
            n_records: samples.len(),
            auc: None,
            sensitivity: None,
            specificity: None,
            cutoff: eval::DEFAULT_CUTOFF,
            location_accuracy: None,
            dice: None,
            delong: None,
            config_hash: config_hash.to_string(),
            dice_averaging: String::new(),
        },
    };
    r.dice_averaging = "per-case mean over non-empty ground truth".into();
    r.location_accuracy = p.location_accuracy();
    if model.cfg.heads.seg {
        r.dice = Some(eval::summarize_dice(&p.dice));
    }
    Ok((r, p))
}

/// Evaluate a saved checkpoint on one split of a dataset, using the ROI
/// settings and text matrices stored with it.
pub fn evaluate_checkpoint(
    data_dir: &Path,
    ckpt: &Path,
    split: Split,
    audit: &Audit,
) -> Result<(EvalReport, Predictions)> {
    let loaded = checkpoint::load::<f32>(ckpt)?;
    let manifest = Manifest::read(data_dir)?;
    audit.set_phase(&format!("eval_{}", split.as_str()));
    let roi: &RoiSpec = &loaded.meta.roi;
    let samples = load_samples(data_dir, manifest.split(split), roi, MaskSource::Visible, audit)?;
    let mats = loaded.meta.text.as_ref().map(|t| t.matrices());
    report_for(&loaded.model, &samples, mats.as_ref(), split.as_str(), &loaded.meta.config_hash)
}

/// Full procedure for `mode`. Modes trained on pseudo masks first train a
/// teacher and label the weak records, unless `pseudo_from` points at an
/// existing pseudo-mask directory.
pub fn run_mode(
    data_dir: &Path,
    run_dir: &Path,
    cfg: ExperimentConfig,
    mode: Mode,
    pseudo_from: Option<&Path>,
) -> Result<RunReport> {
    let exp = Experiment::open(data_dir, run_dir, cfg)?;
    exp.reset_logs()?;
    let mut teacher_summary = None;
    let mut weak_dice = None;
    let mut pseudo = None;
    let mut teacher = None;
    let pseudo_dir = if mode.needs_pseudo_masks() {
        match pseudo_from {
            Some(dir) => {
                pseudo = Some(PseudoSummary::from(&PseudoLabelSet::read(dir)?));
                Some(dir.to_path_buf())
            }
            None => {
                let t = exp.train_teacher()?;
                let set = exp.pseudo_label(&t.model, &t.sha256)?;
                pseudo = Some(PseudoSummary::from(&set));
                teacher_summary = Some(t.summary());
                teacher = Some(t);
                Some(exp.pseudo_dir())
            }
        }
    } else {
        None
    };
    let trained = exp.train_mode(mode, pseudo_dir.as_deref())?;
    // Hidden masks are read only now, after every training stage.
    if let (Some(t), true) = (&teacher, exp.cfg.analyze_weak_dice) {
        weak_dice = exp.analyze_weak_dice(&t.model).map_err(|e| e.in_stage("analysis"))?;
    }
    exp.finish(mode, &trained, teacher_summary, weak_dice, pseudo)
        .map_err(|e| e.in_stage("evaluate"))
}

/// The two-step procedure with the text-guided student.
pub fn run_wssl(data_dir: &Path, run_dir: &Path, cfg: ExperimentConfig) -> Result<RunReport> {
    run_mode(data_dir, run_dir, cfg, Mode::Student, None)
}

/// Baselines by name: `weak-only`, `full-x`, `wssl-no-text`, `table3-a`
/// through `table3-e`, or any training mode name.
pub fn resolve_baseline(name: &str, mut cfg: ExperimentConfig) -> Result<(Mode, ExperimentConfig)> {
    let mode = match name {
        "weak-only" => Mode::WeakOnlyClassifier,
        "full-x" => Mode::FullySupervised,
        "wssl-no-text" => {
            cfg.loss.alpha = 0.0;
            Mode::Student
        }
        "table3-a" => Mode::DetOnly,
        "table3-b" => Mode::LocOnly,
        "table3-c" => Mode::JointNoText,
        "table3-d" => Mode::SegLoc,
        "table3-e" => Mode::MultitaskClsLoc,
        other => other.replace('-', "_").parse()?,
    };
    Ok((mode, cfg))
}

pub const BASELINE_NAMES: [&str; 8] = [
    "weak-only",
    "full-x",
    "wssl-no-text",
    "table3-a",
    "table3-b",
    "table3-c",
    "table3-d",
    "table3-e",
];

/// Ablation grid: each key maps to the values it takes; runs cover the
/// cartesian product in key order.
pub type AblationGrid = BTreeMap<String, Vec<serde_json::Value>>;

pub const GRID_KEYS: [&str; 7] = ["alpha", "beta", "lambda", "full_fraction", "prompts", "teacher_prompts", "mode"];

fn apply_grid_value(cfg: &mut ExperimentConfig, mode: &mut Mode, key: &str, v: &serde_json::Value) -> Result<()> {
    let num = || {
        v.as_f64()
            .ok_or_else(|| config(format!("grid key {key} needs numbers, got {v}")))
    };
    let prompts = || -> Result<PromptSet> {
        let s = v.as_str().unwrap_or_default().replace('+', "_");
        serde_json::from_value(serde_json::Value::String(s)).map_err(|_| config(format!("bad prompt set {v}")))
    };
    match key {
        "alpha" => cfg.loss.alpha = num()?,
        "beta" => cfg.loss.beta = num()?,
        "lambda" => cfg.loss.lambda = num()?,
        "full_fraction" => cfg.full_fraction = num()?,
        "prompts" => cfg.student_prompts = prompts()?,
        "teacher_prompts" => cfg.teacher_prompts = prompts()?,
        "mode" => {
            let name = v
                .as_str()
                .ok_or_else(|| config(format!("grid key mode needs strings, got {v}")))?;
            let (m, c) = resolve_baseline(name, cfg.clone())?;
            *mode = m;
            *cfg = c;
        }
        other => return Err(config(format!("unknown grid key `{other}`"))),
    }
    Ok(())
}

/// One grid point: its `key=value` pairs, config and mode.
pub type GridPoint = (Vec<(String, serde_json::Value)>, ExperimentConfig, Mode);

pub fn expand_grid(
    base: &ExperimentConfig,
    base_mode: Mode,
    grid: &AblationGrid,
) -> Result<Vec<GridPoint>> {
    let mut points = vec![(Vec::new(), base.clone(), base_mode)];
    // `mode` first so later keys override what a baseline preset sets.
    let mut keys: Vec<&String> = grid.keys().collect();
    keys.sort_by_key(|k| (k.as_str() != "mode", k.as_str()));
    for key in keys {
        let values = &grid[key];
        if values.is_empty() {
            return Err(config(format!("grid key {key} has no values")));
        }
        let mut next = Vec::with_capacity(points.len() * values.len());
        for (kv, cfg, mode) in &points {
            for v in values {
                let (mut c, mut m) = (cfg.clone(), *mode);
                apply_grid_value(&mut c, &mut m, key, v)?;
                let mut kv = kv.clone();
                kv.push((key.clone(), v.clone()));
                next.push((kv, c, m));
            }
        }
        points = next;
    }
    for (_, c, _) in &points {
        c.validate()?;
    }
    Ok(points)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub point: usize,
    pub values: Vec<(String, serde_json::Value)>,
    pub mode: Mode,
    pub report: RunReport,
}

pub const GRID_METRICS: [&str; 7] = [
    "val_auc",
    "test_auc",
    "test_sensitivity",
    "test_specificity",
    "test_location_accuracy",
    "test_dice",
    "teacher_weak_dice",
];

fn grid_metrics(r: &RunReport) -> [Option<f64>; 7] {
    [
        r.val.auc,
        r.test.auc,
        r.test.sensitivity,
        r.test.specificity,
        r.test.location_accuracy,
        r.test.dice.as_ref().and_then(|d| d.overall),
        r.weak_teacher_dice.as_ref().and_then(|d| d.overall),
    ]
}

pub fn grid_csv(keys: &[String], rows: &[GridRow]) -> String {
    let mut out = String::from("point,mode");
    for k in keys {
        out.push(',');
        out.push_str(k);
    }
    for m in GRID_METRICS {
        out.push(',');
        out.push_str(m);
    }
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{},{}", r.point, r.mode.as_str()));
        for k in keys {
            let v = r.values.iter().find(|(n, _)| n == k).map(|(_, v)| v);
            out.push(',');
            out.push_str(&match v {
                Some(serde_json::Value::String(s)) => s.clone(),
                Some(v) => v.to_string(),
                None => String::new(),
            });
        }
        for m in grid_metrics(&r.report) {
            out.push(',');
            out.push_str(&m.map(|x| format!("{x:.6}")).unwrap_or_default());
        }
        out.push('\n');
    }
    out
}

/// One run per grid point under `out_dir/point_NNN`, then `ablation.csv`.
pub fn run_ablation_grid(
    data_dir: &Path,
    out_dir: &Path,
    base: &ExperimentConfig,
    base_mode: Mode,
    grid: &AblationGrid,
) -> Result<Vec<GridRow>> {
    let points = expand_grid(base, base_mode, grid)?;
    let mut rows = Vec::with_capacity(points.len());
    for (i, (values, cfg, mode)) in points.into_iter().enumerate() {
        let dir = out_dir.join(format!("point_{i:03}"));
        let report = run_mode(data_dir, &dir, cfg, mode, None).map_err(|e| e.in_stage(&format!("grid point {i}")))?;
        rows.push(GridRow {
            point: i,
            values,
            mode,
            report,
        });
    }
    let keys: Vec<String> = grid.keys().cloned().collect();
    io::write_bytes(&out_dir.join("ablation.csv"), grid_csv(&keys, &rows).as_bytes())?;
    Ok(rows)
}

/// DeLong comparison of two score files over the same records.
pub fn compare_scores(a: &ScoreSet, b: &ScoreSet) -> Result<eval::DelongResult> {
    eval::delong_test(a, b)
}
