//! Mini-batch training with per-epoch validation and best-epoch selection.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::data::Sample;
use super::{lr_schedule, Selection, TrainConfig, TrainSpec};
use crate::error::{Error, Result};
use crate::eval::{self, DiceCase, ScoreSet};
use crate::grid::Mask;
use crate::losses::{self, objective, LossConfig, LossParts, Targets, Temperatures};
use crate::model::{input_tensor, HeadOutputs, Model, ModelConfig};
use crate::nn::{Adam, AdamConfig, HasParams};
use crate::preprocess::{apply_draw, AugmentDraw, AugmentSpec};
use crate::text::TextMatrices;
use crate::util::{derive_seed, fnv_seed, rng_for};

/// Threshold turning foreground probabilities into predicted masks.
pub const MASK_THRESHOLD: f64 = 0.5;

/// One row of `logs/metrics.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub stage: String,
    pub epoch: usize,
    pub split: String,
    pub lr: f64,
    pub loss: Option<LossParts>,
    pub dice: Option<f64>,
    pub auc: Option<f64>,
    pub location_accuracy: Option<f64>,
}

pub const METRICS_HEADER: &str = "stage,epoch,split,lr,loss,seg,det,loc_cls,text_loc,text_det,dice,auc,location_accuracy";

impl EpochLog {
    pub fn csv_row(&self) -> String {
        let o = |v: Option<f64>| v.map(|x| format!("{x:.9}")).unwrap_or_default();
        let l = self.loss;
        format!(
            "{},{},{},{:.9},{},{},{},{},{},{},{},{},{}",
            self.stage,
            self.epoch,
            self.split,
            self.lr,
            o(l.map(|p| p.total)),
            o(l.map(|p| p.seg)),
            o(l.map(|p| p.det)),
            o(l.map(|p| p.loc_cls)),
            o(l.map(|p| p.text_loc)),
            o(l.map(|p| p.text_det)),
            o(self.dice),
            o(self.auc),
            o(self.location_accuracy),
        )
    }
}

pub fn metrics_csv(rows: &[EpochLog]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Model outputs over a set of samples.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Predictions {
    pub ids: Vec<String>,
    pub labels: Vec<u8>,
    pub locations: Vec<u8>,
    /// Cancer probability per sample, when the model has a head for it.
    pub scores: Option<Vec<f64>>,
    pub location_pred: Option<Vec<u8>>,
    /// Per-sample Dice against the sample mask, for samples that carry one.
    pub dice: Vec<DiceCase>,
}

impl Predictions {
    pub fn score_set(&self) -> Option<Result<ScoreSet>> {
        self.scores
            .as_ref()
            .map(|s| ScoreSet::new(self.ids.clone(), s.clone(), self.labels.clone()))
    }

    pub fn auc(&self) -> Option<f64> {
        self.score_set()?.ok().and_then(|s| eval::auc(&s).ok())
    }

    pub fn mean_dice(&self) -> Option<f64> {
        eval::summarize_dice(&self.dice).overall
    }

    pub fn location_accuracy(&self) -> Option<f64> {
        let p = self.location_pred.as_ref()?;
        eval::location_accuracy(p, &self.locations).ok()
    }
}

/// Text-branch probabilities `softmax(s / T)` for one head, or `None` when
/// the model has no projector.
fn text_probs(i: Option<&[f64]>, e: &[f64], t: f64) -> Option<Vec<f64>> {
    let s = losses::similarity(i?, e).ok()?;
    losses::temperature_softmax(&s, t).ok()
}

/// Cancer probability: the detection head, else the location classifier's
/// non-background mass, else the text detection branch, else the largest
/// foreground probability.
pub fn cancer_score<T: crate::nn::Real>(
    out: &HeadOutputs<T>,
    mats: Option<&TextMatrices>,
    temps: &Temperatures,
) -> Option<f64> {
    if let Some(s) = out.cancer_score() {
        return Some(s);
    }
    let v = out.to_values();
    if let Some(l) = &v.loc_logits {
        return Some(1.0 - losses::softmax(l)[0]);
    }
    if let (Some(m), Some(f)) = (mats, &v.text) {
        return text_probs(Some(&f.i_det), &m.e_det, temps.t_det()).map(|p| p[1]);
    }
    out.foreground_probs()
        .map(|p| p.into_iter().fold(0.0, f64::max))
}

/// Predicted location bin: the location classifier, else the text location
/// branch.
pub fn location_prediction<T: crate::nn::Real>(out: &HeadOutputs<T>, mats: Option<&TextMatrices>) -> Option<u8> {
    let v = out.to_values();
    if let Some(l) = &v.loc_logits {
        return Some(eval::argmax(l) as u8);
    }
    let (m, f) = (mats?, v.text?);
    let s = losses::similarity(&f.i_loc, &m.e_loc).ok()?;
    Some(eval::argmax(&s) as u8)
}

pub fn predicted_mask<T: crate::nn::Real>(out: &HeadOutputs<T>, threshold: f64, dims: crate::grid::Dims) -> Option<Mask> {
    let p = out.foreground_probs()?;
    Some(Mask::from_vec(dims, p.into_iter().map(|v| u8::from(v > threshold)).collect()).expect("model-space shape"))
}

pub fn predict<T: crate::nn::Real>(model: &Model<T>, samples: &[Sample], mats: Option<&TextMatrices>) -> Result<Predictions> {
    let temps = model.temperatures();
    let mut p = Predictions::default();
    let mut scores = Vec::with_capacity(samples.len());
    let mut locs = Vec::with_capacity(samples.len());
    for s in samples {
        let (out, _) = model.forward(&input_tensor::<T>(&s.input))?;
        p.ids.push(s.id.clone());
        p.labels.push(s.diagnosis);
        p.locations.push(s.location);
        scores.push(cancer_score(&out, mats, &temps));
        locs.push(location_prediction(&out, mats));
        if let (Some(gt), Some(pred)) = (&s.mask, predicted_mask(&out, MASK_THRESHOLD, s.input.dims())) {
            p.dice.push(DiceCase {
                id: s.id.clone(),
                location: s.location,
                dice: eval::dice_score(&pred, gt)?,
            });
        }
    }
    p.scores = scores.into_iter().collect();
    p.location_pred = locs.into_iter().collect();
    Ok(p)
}

/// A training sample with the mask it is supervised with.
#[derive(Clone, Copy, Debug)]
pub struct TrainItem<'a> {
    pub sample: &'a Sample,
    pub mask: Option<&'a Mask>,
}

impl<'a> From<&'a Sample> for TrainItem<'a> {
    fn from(sample: &'a Sample) -> Self {
        TrainItem {
            sample,
            mask: sample.mask.as_ref(),
        }
    }
}

pub struct TrainSetup<'a> {
    /// Stage name for logs; also keys the shuffle and augmentation streams.
    pub stage: &'a str,
    pub model: ModelConfig,
    pub spec: TrainSpec,
    pub train: &'a TrainConfig,
    pub loss: &'a LossConfig,
    pub augment: &'a AugmentSpec,
    pub mats: Option<&'a TextMatrices>,
    pub seed: u64,
}

pub struct TrainOutcome {
    pub model: Model<f32>,
    pub best_epoch: usize,
    pub best_metric: Option<f64>,
    pub log: Vec<EpochLog>,
    /// Mean train loss of the last epoch.
    pub final_loss: f64,
}

fn selection_metric(select: Selection, p: &Predictions) -> Option<f64> {
    match select {
        Selection::ValDice => p.mean_dice(),
        Selection::ValAuc => p.auc(),
    }
}

pub fn train(setup: &TrainSetup<'_>, items: &[TrainItem<'_>], val: &[Sample]) -> Result<TrainOutcome> {
    let cfg = setup.train;
    cfg.validate()?;
    if items.is_empty() {
        return Err(Error::Config(format!("stage {}: no training records", setup.stage)));
    }
    let mut mcfg = setup.model.clone();
    mcfg.heads = setup.spec.heads;
    let mut model = Model::<f32>::new(mcfg)?;
    let weights = setup.spec.weights;
    if weights.seg.is_some() && items.iter().any(|it| it.mask.is_none()) {
        return Err(Error::Config(format!(
            "stage {}: segmentation term needs a mask for every record",
            setup.stage
        )));
    }
    let mats = if setup.spec.heads.text { setup.mats } else { None };
    if setup.spec.heads.text && mats.is_none() {
        return Err(Error::Config("text head needs text matrices".into()));
    }
    let mut adam = Adam::<f32>::new(AdamConfig {
        weight_decay: cfg.weight_decay,
        ..Default::default()
    });
    let stream = fnv_seed(setup.stage);
    let batches = items.len().div_ceil(cfg.batch_size);
    let total = cfg.epochs * batches;
    let warmup = cfg.warmup_epochs * batches;
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut step = 0;
    let mut log = Vec::new();
    let mut best: Option<(usize, Option<f64>, Model<f32>)> = None;
    let mut final_loss = f64::NAN;

    for epoch in 1..=cfg.epochs {
        let epoch_seed = derive_seed(derive_seed(setup.seed, stream), epoch as u64);
        order.shuffle(&mut rng_for(epoch_seed, 0));
        let mut sum = LossParts::default();
        let mut lr = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            model.zero_grad();
            let inv = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let it = items[i];
                let draw = AugmentDraw::sample(setup.augment, derive_seed(epoch_seed, i as u64 + 1));
                let (input, mask) = augmented(it, &draw);
                let (out, cache) = model.forward(&input_tensor::<f32>(&input))?;
                let targets = Targets {
                    mask: mask.as_ref().map(|m| m.data()),
                    labels: it.sample.labels(),
                };
                let mut obj = objective(
                    &out.to_values(),
                    targets,
                    mats,
                    &model.temperatures(),
                    &weights,
                    setup.loss.dice_smooth,
                )?;
                if !obj.parts.total.is_finite() {
                    return Err(Error::Numerical(format!(
                        "stage {}: non-finite loss at epoch {epoch} on {}",
                        setup.stage, it.sample.id
                    )));
                }
                obj.grads.scale(inv);
                model.backward(&cache, &out, &obj.grads);
                sum.add_scaled(&obj.parts, 1.0 / items.len() as f64);
            }
            step += 1;
            lr = lr_schedule(step, total, warmup, cfg.lr);
            adam.step(&mut model, lr);
            model.clamp_temperatures();
        }
        final_loss = sum.total;
        log.push(EpochLog {
            stage: setup.stage.to_string(),
            epoch,
            split: "train".into(),
            lr,
            loss: Some(sum),
            dice: None,
            auc: None,
            location_accuracy: None,
        });
        let metric = if val.is_empty() {
            None
        } else {
            let p = predict(&model, val, mats)?;
            log.push(EpochLog {
                stage: setup.stage.to_string(),
                epoch,
                split: "val".into(),
                lr,
                loss: None,
                dice: p.mean_dice(),
                auc: p.auc(),
                location_accuracy: p.location_accuracy(),
            });
            selection_metric(setup.spec.select, &p)
        };
        // Later epochs win ties; an undefined metric never beats a defined one.
        let better = match (&best, metric) {
            (None, _) => true,
            (Some((_, None, _)), _) => true,
            (Some((_, Some(_), _)), None) => false,
            (Some((_, Some(b), _)), Some(m)) => m >= *b,
        };
        if better {
            best = Some((epoch, metric, model.clone()));
        }
    }
    let (best_epoch, best_metric, model) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        model,
        best_epoch,
        best_metric,
        log,
        final_loss,
    })
}

fn augmented(it: TrainItem<'_>, draw: &AugmentDraw) -> (crate::grid::Volume, Option<Mask>) {
    if *draw == AugmentDraw::IDENTITY {
        return (it.sample.input.clone(), it.mask.cloned());
    }
    match it.mask {
        Some(m) => {
            let (v, m) = apply_draw(&it.sample.input, m, draw);
            (v, Some(m))
        }
        None => {
            let empty = Mask::filled(it.sample.input.dims(), 0);
            (apply_draw(&it.sample.input, &empty, draw).0, None)
        }
    }
}
