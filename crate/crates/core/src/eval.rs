//! Segmentation and detection metrics, ROC export and the DeLong test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{invalid, Error, Result};
use crate::grid::Mask;

pub const DEFAULT_CUTOFF: f64 = 0.5;

/// Per-record cancer scores with binary labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreSet {
    pub ids: Vec<String>,
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

impl ScoreSet {
    pub fn new(ids: Vec<String>, scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        let s = ScoreSet { ids, scores, labels };
        s.validate()?;
        Ok(s)
    }

    /// Score set with ids `0..n`.
    pub fn anonymous(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        let ids = (0..scores.len()).map(|i| i.to_string()).collect();
        ScoreSet::new(ids, scores, labels)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ids.len() != self.scores.len() || self.scores.len() != self.labels.len() {
            return Err(invalid(format!(
                "score set lengths differ: {} ids, {} scores, {} labels",
                self.ids.len(),
                self.scores.len(),
                self.labels.len()
            )));
        }
        if self.labels.iter().any(|&l| l > 1) {
            return Err(invalid("labels must be 0 or 1"));
        }
        if self.scores.iter().any(|s| s.is_nan()) {
            return Err(invalid("scores contain NaN"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// (positives, negatives)
    pub fn class_counts(&self) -> (usize, usize) {
        let m = self.labels.iter().filter(|&&l| l == 1).count();
        (m, self.labels.len() - m)
    }

    fn require_both_classes(&self) -> Result<(usize, usize)> {
        self.validate()?;
        let (m, n) = self.class_counts();
        if m == 0 || n == 0 {
            return Err(Error::UndefinedMetric(format!(
                "need both classes, got {m} positive and {n} negative"
            )));
        }
        Ok((m, n))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// `2|P ∩ G| / (|P| + |G|)`, with two empty masks scoring 1.
pub fn dice_score(pred: &Mask, gt: &Mask) -> Result<f64> {
    if pred.dims() != gt.dims() {
        return Err(invalid(format!(
            "mask shapes differ: {} vs {}",
            pred.dims(),
            gt.dims()
        )));
    }
    dice_slices(pred.data(), gt.data())
}

pub fn dice_slices(pred: &[u8], gt: &[u8]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(invalid("mask lengths differ"));
    }
    let mut inter = 0usize;
    let mut p = 0usize;
    let mut g = 0usize;
    for (&a, &b) in pred.iter().zip(gt) {
        let a = a != 0;
        let b = b != 0;
        inter += (a && b) as usize;
        p += a as usize;
        g += b as usize;
    }
    if p + g == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (p + g) as f64)
}

/// 1-based ranks with ties sharing their average rank.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// DeLong placement values: `v10[i]` is the fraction of negatives ranked
/// below positive `i` (ties count half), `v01[j]` the fraction of positives
/// ranked above negative `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct Placements {
    pub v10: Vec<f64>,
    pub v01: Vec<f64>,
}

impl Placements {
    pub fn auc(&self) -> f64 {
        self.v10.iter().sum::<f64>() / self.v10.len() as f64
    }
}

pub fn placements(set: &ScoreSet) -> Result<Placements> {
    let (m, n) = set.require_both_classes()?;
    let pos: Vec<f64> = select(set, 1);
    let neg: Vec<f64> = select(set, 0);
    let all: Vec<f64> = pos.iter().chain(&neg).copied().collect();
    let r_all = midranks(&all);
    let r_pos = midranks(&pos);
    let r_neg = midranks(&neg);
    let v10 = (0..m).map(|i| (r_all[i] - r_pos[i]) / n as f64).collect();
    let v01 = (0..n)
        .map(|j| 1.0 - (r_all[m + j] - r_neg[j]) / m as f64)
        .collect();
    Ok(Placements { v10, v01 })
}

fn select(set: &ScoreSet, label: u8) -> Vec<f64> {
    set.scores
        .iter()
        .zip(&set.labels)
        .filter(|(_, &l)| l == label)
        .map(|(&s, _)| s)
        .collect()
}

/// Mann-Whitney AUC with ties counted one half.
pub fn auc(set: &ScoreSet) -> Result<f64> {
    Ok(placements(set)?.auc())
}

/// Sensitivity and specificity with `score >= cutoff` predicted positive.
pub fn sens_spec(set: &ScoreSet, cutoff: f64) -> Result<(f64, f64)> {
    set.validate()?;
    let (mut tp, mut fn_, mut tn, mut fp) = (0usize, 0usize, 0usize, 0usize);
    for (&s, &l) in set.scores.iter().zip(&set.labels) {
        match (l == 1, s >= cutoff) {
            (true, true) => tp += 1,
            (true, false) => fn_ += 1,
            (false, false) => tn += 1,
            (false, true) => fp += 1,
        }
    }
    if tp + fn_ == 0 || tn + fp == 0 {
        return Err(Error::UndefinedMetric(
            "sensitivity and specificity need both classes".into(),
        ));
    }
    Ok((tp as f64 / (tp + fn_) as f64, tn as f64 / (tn + fp) as f64))
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn location_accuracy(pred: &[u8], truth: &[u8]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(invalid("location vectors differ in length"));
    }
    if pred.is_empty() {
        return Err(Error::UndefinedMetric("no location predictions".into()));
    }
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / pred.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DelongResult {
    pub auc_a: f64,
    pub auc_b: f64,
    pub z: f64,
    pub p: f64,
    pub var: f64,
}

/// Sample covariance (divisor `k - 1`) of two equally long sequences.
fn cov(a: &[f64], b: &[f64]) -> f64 {
    let k = a.len() as f64;
    if a.len() < 2 {
        return 0.0;
    }
    let ma = a.iter().sum::<f64>() / k;
    let mb = b.iter().sum::<f64>() / k;
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (k - 1.0)
}

/// 2x2 covariance of the AUC pair `[[aa, ab], [ab, bb]]`.
pub fn delong_covariance(a: &Placements, b: &Placements) -> [[f64; 2]; 2] {
    let m = a.v10.len() as f64;
    let n = a.v01.len() as f64;
    let s = |x: &[f64], y: &[f64], u: &[f64], v: &[f64]| cov(x, y) / m + cov(u, v) / n;
    let aa = s(&a.v10, &a.v10, &a.v01, &a.v01);
    let bb = s(&b.v10, &b.v10, &b.v01, &b.v01);
    let ab = s(&a.v10, &b.v10, &a.v01, &b.v01);
    [[aa, ab], [ab, bb]]
}

/// Paired DeLong test for two score vectors on the same records.
pub fn delong_test(a: &ScoreSet, b: &ScoreSet) -> Result<DelongResult> {
    if a.labels != b.labels || a.ids != b.ids {
        return Err(invalid("DeLong test needs the same records and labels in both sets"));
    }
    let pa = placements(a)?;
    let pb = placements(b)?;
    let (auc_a, auc_b) = (pa.auc(), pb.auc());
    let c = delong_covariance(&pa, &pb);
    let var = c[0][0] + c[1][1] - 2.0 * c[0][1];
    let diff = auc_a - auc_b;
    if var <= 1e-12 {
        let (z, p) = if diff == 0.0 {
            (0.0, 1.0)
        } else {
            (diff.signum() * f64::INFINITY, 0.0)
        };
        return Ok(DelongResult { auc_a, auc_b, z, p, var });
    }
    let z = diff / var.sqrt();
    let normal = Normal::standard();
    let p = (2.0 * (1.0 - normal.cdf(z.abs()))).clamp(0.0, 1.0);
    Ok(DelongResult { auc_a, auc_b, z, p, var })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Records with `score >= threshold` are called positive. The (0,0) point
    /// carries `+inf`.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC staircase over all distinct thresholds, from (0,0) to (1,1).
pub fn roc_curve(set: &ScoreSet) -> Result<Vec<RocPoint>> {
    let (m, n) = set.require_both_classes()?;
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.sort_by(|&a, &b| set.scores[b].total_cmp(&set.scores[a]));
    let mut pts = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = set.scores[order[i]];
        while i < order.len() && set.scores[order[i]] == t {
            if set.labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        pts.push(RocPoint {
            threshold: t,
            fpr: fp as f64 / n as f64,
            tpr: tp as f64 / m as f64,
        });
    }
    Ok(pts)
}

pub fn trapezoid_area(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

pub fn roc_csv(points: &[RocPoint]) -> String {
    let mut s = String::from("threshold,fpr,tpr\n");
    for p in points {
        s.push_str(&format!("{},{},{}\n", p.threshold, p.fpr, p.tpr));
    }
    s
}

/// Location bin groups used for per-location Dice: bins 1-3 pooled, and the
/// junction bin alone.
pub const DICE_GROUPS: [(&str, &[u8]); 2] = [("upper_middle_lower", &[1, 2, 3]), ("junction", &[4])];

/// One test-set case for segmentation reporting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiceCase {
    pub id: String,
    pub location: u8,
    pub dice: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiceSummary {
    /// Mean over cases with non-empty ground truth.
    pub overall: Option<f64>,
    pub by_group: Vec<(String, Option<f64>)>,
    pub n_cases: usize,
}

fn mean(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Per-case mean Dice. Cases with location 0 (no tumor) are skipped.
pub fn summarize_dice(cases: &[DiceCase]) -> DiceSummary {
    let tumor: Vec<&DiceCase> = cases.iter().filter(|c| c.location > 0).collect();
    let overall = mean(&tumor.iter().map(|c| c.dice).collect::<Vec<_>>());
    let by_group = DICE_GROUPS
        .iter()
        .map(|(name, bins)| {
            let d: Vec<f64> = tumor
                .iter()
                .filter(|c| bins.contains(&c.location))
                .map(|c| c.dice)
                .collect();
            (name.to_string(), mean(&d))
        })
        .collect();
    DiceSummary {
        overall,
        by_group,
        n_cases: tumor.len(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: String,
    pub n_records: usize,
    pub auc: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub cutoff: f64,
    pub location_accuracy: Option<f64>,
    pub dice: Option<DiceSummary>,
    pub delong: Option<DelongResult>,
    pub config_hash: String,
    pub dice_averaging: String,
}

impl EvalReport {
    /// Detection metrics from a score set. Metrics a single-class set cannot
    /// define are left empty.
    pub fn from_scores(split: &str, scores: &ScoreSet, config_hash: &str) -> Result<Self> {
        scores.validate()?;
        let auc = auc(scores).ok();
        let ss = sens_spec(scores, DEFAULT_CUTOFF).ok();
        Ok(EvalReport {
            split: split.to_string(),
            n_records: scores.len(),
            auc,
            sensitivity: ss.map(|s| s.0),
            specificity: ss.map(|s| s.1),
            cutoff: DEFAULT_CUTOFF,
            location_accuracy: None,
            dice: None,
            delong: None,
            config_hash: config_hash.to_string(),
            dice_averaging: "per-case mean over non-empty ground truth".into(),
        })
    }

    /// Flat `(key, value)` rows for CSV and Markdown tables.
    pub fn metric_rows(&self) -> Vec<(String, Option<f64>)> {
        let mut rows = vec![
            ("auc".to_string(), self.auc),
            ("sensitivity".to_string(), self.sensitivity),
            ("specificity".to_string(), self.specificity),
            ("location_accuracy".to_string(), self.location_accuracy),
        ];
        if let Some(d) = &self.dice {
            rows.push(("dice_overall".into(), d.overall));
            for (g, v) in &d.by_group {
                rows.push((format!("dice_{g}"), *v));
            }
        }
        if let Some(d) = &self.delong {
            rows.push(("delong_p".into(), Some(d.p)));
        }
        rows
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}
