//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.
//!
//! `ACCEPTANCE_ONLY=1,3,8` restricts the run to the listed criteria.
//! Criteria 5 and 6 train on a 310-phantom benchmark for three seeds and
//! dominate the runtime (roughly 25 minutes on one core).

#![allow(clippy::needless_range_loop)]

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wssl_core::eval::{auc, delong_covariance, delong_test, dice_score, placements, roc_curve, trapezoid_area, ScoreSet};
use wssl_core::grid::{Dims, Grid, Mask, Volume};
use wssl_core::io::AuditEntry;
use wssl_core::losses::{
    det_loss, dice_loss, joint_loss, seg_loss, similarity, student_loss, teacher_loss, temperature_softmax,
    text_det_loss, text_loc_loss, LossConfig, Temperatures, TextFeatures, WeakLabels,
};
use wssl_core::phantom::{assign_supervision, generate_dataset, Manifest, PhantomConfig, Split, Supervision};
use wssl_core::pipeline::pseudo::{filter_pseudo_by_location, PseudoLabelSet};
use wssl_core::pipeline::run::{resolve_baseline, run_mode, run_wssl, Experiment, AUDIT_FILE, METRICS_FILE};
use wssl_core::pipeline::{ExperimentConfig, NetworkConfig, TrainConfig};
use wssl_core::preprocess::{normalize, roi_box, RoiSpec};
use wssl_core::text::TextMatrices;

mod common;

use common::*;

// Tolerances.
const LOSS_TOL: f64 = 1e-10;
const FD_STEP: f64 = 1e-4;
const FD_REL_TOL: f64 = 1e-6;
const AUC_TOL: f64 = 1e-12;
const DELONG_TOL: f64 = 1e-9;
const SOFTMAX_TOL: f64 = 1e-6;
const NORM_MEAN_TOL: f64 = 1e-5;
const NORM_VAR_TOL: f64 = 1e-4;
const TREND_SLACK: f64 = 0.005;
const DRIFT_TOL: f64 = 1e-6;

// Sample counts.
const LOSS_CASES: usize = 100;
const FD_CONFIGS: usize = 20;
const AUC_SETS: usize = 50;
const SOFTMAX_VECTORS: usize = 1000;
const ROI_MASKS: usize = 50;
const BENCH_SEEDS: [u64; 3] = [0, 1, 2];

type Outcome = std::result::Result<String, String>;

fn check(ok: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn bits(rng: &mut ChaCha8Rng, n: usize) -> Vec<u8> {
    (0..n).map(|_| rng.random_range(0..2u8)).collect()
}

fn random_mats(rng: &mut ChaCha8Rng, d: usize) -> TextMatrices {
    TextMatrices {
        dim: d,
        e_det: uniform(rng, 2 * d, -1.0, 1.0),
        e_loc: uniform(rng, 5 * d, -1.0, 1.0),
    }
}

fn text_oracle(f: &TextFeatures, m: &TextMatrices, l: WeakLabels, t: &Temperatures) -> f64 {
    naive_text(&f.i_loc, &m.e_loc, l.location as usize, t.t_loc()) + naive_text(&f.i_det, &m.e_det, l.diagnosis as usize, t.t_det())
}

fn c1_loss_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    let mut cmp = |name: &str, got: f64, want: f64| {
        let e = (got - want).abs();
        worst = worst.max(e);
        check(e <= LOSS_TOL, || format!("{name}: {got} vs oracle {want}"))
    };
    for _ in 0..LOSS_CASES {
        let n = rng.random_range(1..40);
        let d = rng.random_range(2..12);
        let logits = uniform(&mut rng, 2 * n, -6.0, 6.0);
        let mask = bits(&mut rng, n);
        let probs = uniform(&mut rng, n, 0.0, 1.0);
        let det = [rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0)];
        let mats = random_mats(&mut rng, d);
        let feats = TextFeatures { i_det: uniform(&mut rng, d, -1.0, 1.0), i_loc: uniform(&mut rng, d, -1.0, 1.0) };
        let labels = WeakLabels { diagnosis: rng.random_range(0..2), location: rng.random_range(0..5) };
        let temps = Temperatures::new(rng.random_range(0.05..3.0), rng.random_range(0.05..3.0));
        let cfg = LossConfig {
            lambda: rng.random_range(0.0..1.0),
            alpha: rng.random_range(0.0..1.0),
            beta: rng.random_range(0.0..1.0),
            ..Default::default()
        };
        let eps = cfg.dice_smooth;

        cmp("dice_loss", dice_loss(&probs, &mask, eps).unwrap(), naive_dice(&probs, &mask, eps))?;
        cmp("seg_loss", seg_loss(&logits, &mask, eps).unwrap().value, naive_seg(&logits, &mask, eps))?;
        cmp("det_loss", det_loss(&det, labels.diagnosis).unwrap().value, naive_ce(&det, labels.diagnosis as usize))?;
        let sims = similarity(&feats.i_loc, &mats.e_loc).unwrap();
        for (k, row) in mats.e_loc.chunks(d).enumerate() {
            let mut dot = 0.0;
            for c in 0..d {
                dot += row[c] * feats.i_loc[c];
            }
            cmp("similarity", sims[k], dot)?;
        }
        let t = rng.random_range(0.01..10.0);
        let p = temperature_softmax(&sims, t).unwrap();
        let scaled: Vec<f64> = sims.iter().map(|s| s / t).collect();
        for (a, b) in p.iter().zip(naive_softmax(&scaled)) {
            cmp("temperature_softmax", *a, b)?;
        }
        cmp(
            "text_loc_loss",
            text_loc_loss(&feats.i_loc, &mats.e_loc, labels.location, temps.log_t_loc).unwrap().value,
            naive_text(&feats.i_loc, &mats.e_loc, labels.location as usize, temps.t_loc()),
        )?;
        cmp(
            "text_det_loss",
            text_det_loss(&feats.i_det, &mats.e_det, labels.diagnosis, temps.log_t_det).unwrap().value,
            naive_text(&feats.i_det, &mats.e_det, labels.diagnosis as usize, temps.t_det()),
        )?;
        let seg = naive_seg(&logits, &mask, eps);
        let text = text_oracle(&feats, &mats, labels, &temps);
        let joint = seg + cfg.beta * naive_ce(&det, labels.diagnosis as usize);
        cmp(
            "teacher_loss",
            teacher_loss(&logits, &mask, &feats, &mats, labels, &temps, &cfg).unwrap().parts.total,
            seg + cfg.lambda * text,
        )?;
        cmp("joint_loss", joint_loss(&logits, &mask, &det, labels.diagnosis, &cfg).unwrap().parts.total, joint)?;
        cmp(
            "student_loss",
            student_loss(&logits, &mask, &det, &feats, &mats, labels, &temps, &cfg).unwrap().parts.total,
            joint + cfg.alpha * text,
        )?;
    }
    Ok(format!("{LOSS_CASES} cases x 10 losses, max abs error {worst:.1e}"))
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-4)
}

fn central(f: &dyn Fn(&[f64]) -> f64, x: &[f64], k: usize) -> f64 {
    let mut p = x.to_vec();
    p[k] += FD_STEP;
    let fp = f(&p);
    p[k] -= 2.0 * FD_STEP;
    (fp - f(&p)) / (2.0 * FD_STEP)
}

fn c2_gradient_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for cfg_i in 0..FD_CONFIGS {
        let n = rng.random_range(2..10);
        let d = rng.random_range(2..8);
        let seg = uniform(&mut rng, 2 * n, -3.0, 3.0);
        let mask = bits(&mut rng, n);
        let det = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
        let mats = random_mats(&mut rng, d);
        let feats = TextFeatures { i_det: uniform(&mut rng, d, -1.0, 1.0), i_loc: uniform(&mut rng, d, -1.0, 1.0) };
        let labels = WeakLabels { diagnosis: rng.random_range(0..2), location: rng.random_range(0..5) };
        let temps = Temperatures::new(rng.random_range(0.07..2.0), rng.random_range(0.07..2.0));
        let cfg = LossConfig {
            lambda: rng.random_range(0.01..1.0),
            alpha: rng.random_range(0.01..1.0),
            beta: rng.random_range(0.01..1.0),
            ..Default::default()
        };

        // x = [seg logits | det logits | i_det | i_loc | log_t_loc, log_t_det]
        let mut x = seg.clone();
        x.extend(det);
        x.extend(&feats.i_det);
        x.extend(&feats.i_loc);
        x.extend([temps.log_t_loc, temps.log_t_det]);
        let unpack = |x: &[f64]| {
            let s = x[..2 * n].to_vec();
            let dt = [x[2 * n], x[2 * n + 1]];
            let o = 2 * n + 2;
            let f = TextFeatures { i_det: x[o..o + d].to_vec(), i_loc: x[o + d..o + 2 * d].to_vec() };
            let t = Temperatures { log_t_loc: x[o + 2 * d], log_t_det: x[o + 2 * d + 1] };
            (s, dt, f, t)
        };
        let student = |x: &[f64]| {
            let (s, dt, f, t) = unpack(x);
            student_loss(&s, &mask, &dt, &f, &mats, labels, &t, &cfg).unwrap()
        };
        let teacher = |x: &[f64]| {
            let (s, _, f, t) = unpack(x);
            teacher_loss(&s, &mask, &f, &mats, labels, &t, &cfg).unwrap()
        };
        for (name, f, with_det) in [
            ("student", &student as &dyn Fn(&[f64]) -> wssl_core::losses::ObjectiveOut, true),
            ("teacher", &teacher, false),
        ] {
            let g = f(&x).grads;
            let mut analytic = g.seg_logits.clone().unwrap();
            analytic.extend(if with_det { g.det_logits.unwrap() } else { [0.0, 0.0] });
            analytic.extend(g.i_det.clone().unwrap());
            analytic.extend(g.i_loc.clone().unwrap());
            analytic.extend([g.log_t_loc, g.log_t_det]);
            let total = |x: &[f64]| f(x).parts.total;
            for (k, &a) in analytic.iter().enumerate() {
                let num = central(&total, &x, k);
                let e = rel_err(a, num);
                worst = worst.max(e);
                checked += 1;
                check(e < FD_REL_TOL, || format!("config {cfg_i} {name} coordinate {k}: {a} vs {num}"))?;
            }
        }
    }
    Ok(format!("{FD_CONFIGS} configs, {checked} partials, max rel error {worst:.1e}"))
}

fn random_score_set(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, Vec<u8>) {
    let mut labels = bits(rng, n);
    labels[0] = 1;
    labels[1] = 0;
    labels[2] = 1;
    labels[3] = 0;
    // a coarse grid makes ties common
    let scores = (0..n).map(|_| rng.random_range(0..25) as f64 / 24.0).collect();
    (scores, labels)
}

fn c3_metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    for i in 0..AUC_SETS {
        let n = rng.random_range(4..=200);
        let (a, l) = random_score_set(&mut rng, n);
        let (b, _) = random_score_set(&mut rng, n);
        let sa = ScoreSet::anonymous(a.clone(), l.clone()).unwrap();
        let sb = ScoreSet::anonymous(b.clone(), l.clone()).unwrap();
        let got = auc(&sa).unwrap();
        let want = brute_auc(&a, &l);
        check((got - want).abs() <= AUC_TOL, || format!("set {i}: auc {got} vs brute force {want}"))?;
        let area = trapezoid_area(&roc_curve(&sa).unwrap());
        check((area - got).abs() <= AUC_TOL, || format!("set {i}: roc area {area} vs auc {got}"))?;

        let (pa, pb) = (placements(&sa).unwrap(), placements(&sb).unwrap());
        let (v10, v01) = naive_placements(&a, &l);
        for (x, y) in pa.v10.iter().zip(&v10).chain(pa.v01.iter().zip(&v01)) {
            check((x - y).abs() <= DELONG_TOL, || format!("set {i}: placement {x} vs {y}"))?;
        }
        let cov = delong_covariance(&pa, &pb);
        let want = naive_delong_cov(&a, &b, &l);
        for r in 0..2 {
            for c in 0..2 {
                check((cov[r][c] - want[r][c]).abs() <= DELONG_TOL, || {
                    format!("set {i}: covariance [{r}][{c}] {} vs {}", cov[r][c], want[r][c])
                })?;
            }
        }
        let own = delong_test(&sa, &sa).unwrap();
        check(own.p == 1.0, || format!("set {i}: delong(a, a) p = {}", own.p))?;

        let d = Dims::new(rng.random_range(1..6), rng.random_range(1..6), rng.random_range(1..6));
        let pm = Mask::from_vec(d, bits(&mut rng, d.len())).unwrap();
        let gm = Mask::from_vec(d, bits(&mut rng, d.len())).unwrap();
        let got = dice_score(&pm, &gm).unwrap();
        let want = naive_mask_dice(pm.data(), gm.data()).unwrap_or(1.0);
        check(got == want, || format!("set {i}: dice {got} vs voxel count {want}"))?;
    }
    Ok(format!("{AUC_SETS} score sets with ties, n <= 200"))
}

fn c4_softmax_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let temps = [0.01, 0.07, 1.0, 10.0];
    for v in 0..SOFTMAX_VECTORS {
        let k = rng.random_range(2..=6);
        let s = uniform(&mut rng, k, -1.0, 1.0);
        let shift = rng.random_range(-5.0..5.0);
        let shifted: Vec<f64> = s.iter().map(|x| x + shift).collect();
        let top = (0..k).fold(0, |b, j| if s[j] > s[b] { j } else { b });
        for &t in &temps {
            let p = temperature_softmax(&s, t).unwrap();
            let sum: f64 = p.iter().sum();
            check((sum - 1.0).abs() <= SOFTMAX_TOL, || format!("vector {v}, T={t}: sum {sum}"))?;
            let q = temperature_softmax(&shifted, t).unwrap();
            for (a, b) in p.iter().zip(&q) {
                check((a - b).abs() <= SOFTMAX_TOL, || format!("vector {v}, T={t}: shift changed {a} to {b}"))?;
            }
            let arg = (0..k).fold(0, |b, j| if p[j] > p[b] { j } else { b });
            check(arg == top, || format!("vector {v}, T={t}: argmax {arg}, expected {top}"))?;
        }
    }
    Ok(format!("{SOFTMAX_VECTORS} vectors x T in {temps:?}"))
}

fn tiny_phantom() -> PhantomConfig {
    PhantomConfig {
        volume_shape: [24, 24, 24],
        organ_radius_range: [3.0, 4.0],
        tumor_radius_range: [1.5, 2.0],
        tumor_contrast: 0.6,
        distractor_count: 1,
        ..Default::default()
    }
}

fn tiny_config() -> ExperimentConfig {
    let t = TrainConfig { epochs: 2, warmup_epochs: 1, lr: 2e-3, batch_size: 4, ..Default::default() };
    ExperimentConfig {
        seed: 3,
        full_fraction: 0.3,
        roi: RoiSpec { margin: [2, 2, 1], target_shape: [8, 8, 8] },
        network: NetworkConfig { stages: 2, base_channels: 2, det_channels: 8, text_dim: 16, ..Default::default() },
        teacher: t.clone(),
        student: t,
        audit: true,
        analyze_weak_dice: true,
        ..Default::default()
    }
}

fn fill(m: &mut Mask, z: std::ops::RangeInclusive<usize>, y: std::ops::RangeInclusive<usize>, x: std::ops::RangeInclusive<usize>) {
    for zz in z {
        for yy in y.clone() {
            for xx in x.clone() {
                m.set(zz, yy, xx, 1);
            }
        }
    }
}

fn c7_pseudo_hygiene() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = tmp.path().join("data");
    generate_dataset(&tiny_phantom(), 40, [0.6, 0.2, 0.2], 17, &data).map_err(|e| e.to_string())?;
    let cfg = tiny_config();
    let run = tmp.path().join("run");
    run_wssl(&data, &run, cfg.clone()).map_err(|e| e.to_string())?;

    let manifest = assign_supervision(&Manifest::read(&data).unwrap(), cfg.full_fraction, cfg.supervision_seed()).unwrap();
    let weak: Vec<_> = manifest.split(Split::Train).filter(|r| r.supervision == Supervision::Weak).collect();
    check(!weak.is_empty(), || "no weak records".into())?;
    let pseudo = PseudoLabelSet::read(&run.join("pseudo_masks")).map_err(|e| e.to_string())?;
    let got: Vec<&String> = pseudo.records.keys().collect();
    let want: Vec<&String> = weak.iter().map(|r| &r.id).collect();
    check(got == want, || format!("pseudo masks for {got:?}, weak records {want:?}"))?;
    for e in pseudo.records.values() {
        check(run.join("pseudo_masks").join(&e.mask).is_file(), || format!("missing {}", e.mask.display()))?;
    }

    let audit: Vec<AuditEntry> = std::fs::read_to_string(run.join(AUDIT_FILE))
        .map_err(|e| e.to_string())?
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let hidden: Vec<_> = weak.iter().map(|r| data.join(r.hidden_mask.as_ref().unwrap())).collect();
    let mut analysis_reads = 0;
    for e in &audit {
        if hidden.contains(&e.path) {
            check(e.phase == "analysis", || format!("hidden mask {} read in phase {}", e.path.display(), e.phase))?;
            analysis_reads += 1;
        }
    }
    // the audit is live: the analysis phase did read them
    check(analysis_reads == hidden.len(), || format!("{analysis_reads} analysis reads for {} weak records", hidden.len()))?;

    // filter fixtures: organ over slices 0..=15, bins 0-3 / 4-7 / 8-11 / 12-15
    let d = Dims::new(16, 8, 8);
    let organ = Mask::from_fn(d, |_, y, x| u8::from((1..7).contains(&y) && (1..7).contains(&x)));
    let mut a = Mask::filled(d, 0);
    fill(&mut a, 1..=2, 2..=3, 2..=3);
    let mut b = Mask::filled(d, 0);
    fill(&mut b, 9..=11, 4..=6, 4..=5);
    let both = Mask::from_fn(d, |z, y, x| a.get(z, y, x) | b.get(z, y, x));
    let empty = Mask::filled(d, 0);
    for (loc, want) in [(0u8, &empty), (1, &a), (2, &empty), (3, &b), (4, &empty)] {
        let got = filter_pseudo_by_location(&both, loc, &organ).unwrap();
        check(&got == want, || format!("two-component fixture, location {loc}: kept {} voxels", got.count()))?;
    }
    Ok(format!("{} weak records, {} audited reads, 5 filter fixtures", weak.len(), audit.len()))
}

fn c8_roi_and_normalize() -> Outcome {
    let margin = RoiSpec::default().margin;
    check(margin == [32, 32, 4], || format!("default margin {margin:?}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    for i in 0..ROI_MASKS {
        let d = Dims::new(rng.random_range(4..40), rng.random_range(8..120), rng.random_range(8..120));
        let mut m = Mask::filled(d, 0);
        for _ in 0..rng.random_range(1..4) {
            let (z, y, x) = (rng.random_range(0..d.z), rng.random_range(0..d.y), rng.random_range(0..d.x));
            fill(
                &mut m,
                z..=(z + rng.random_range(0..4)).min(d.z - 1),
                y..=(y + rng.random_range(0..20)).min(d.y - 1),
                x..=(x + rng.random_range(0..20)).min(d.x - 1),
            );
        }
        let got = roi_box(&m, margin).unwrap();
        let (lo, hi) = naive_roi(m.data(), d.to_zyx(), margin);
        check(got.lo == lo && got.hi == hi, || format!("mask {i}: box {:?}..{:?}, oracle {lo:?}..{hi:?}", got.lo, got.hi))?;

        let scale = rng.random_range(0.01..500.0);
        let offset = rng.random_range(-1000.0..1000.0);
        let v: Volume = Grid::from_fn(d, |_, _, _| (rng.random_range(0.0..1.0) * scale + offset) as f32);
        let (out, flat) = normalize(&v);
        let (mean, var) = mean_var(out.data());
        check(!flat, || format!("volume {i} flagged constant"))?;
        check(mean.abs() <= NORM_MEAN_TOL, || format!("volume {i}: mean {mean}"))?;
        check((var - 1.0).abs() <= NORM_VAR_TOL, || format!("volume {i}: variance {var}"))?;
    }
    Ok(format!("{ROI_MASKS} masks at margin {margin:?}, {ROI_MASKS} volumes normalized"))
}

fn metric_values(report: &serde_json::Value, out: &mut Vec<(String, f64)>, path: String) {
    match report {
        serde_json::Value::Number(n) => out.push((path, n.as_f64().unwrap())),
        serde_json::Value::Array(a) => a.iter().enumerate().for_each(|(i, v)| metric_values(v, out, format!("{path}[{i}]"))),
        serde_json::Value::Object(o) => o.iter().for_each(|(k, v)| metric_values(v, out, format!("{path}.{k}"))),
        _ => {}
    }
}

fn c9_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = tmp.path().join("data");
    generate_dataset(&tiny_phantom(), 24, [0.6, 0.2, 0.2], 9, &data).map_err(|e| e.to_string())?;
    let mut cfg = tiny_config();
    cfg.audit = false;
    let read = |run: &str| -> std::result::Result<(String, String), String> {
        run_wssl(&data, &tmp.path().join(run), cfg.clone()).map_err(|e| e.to_string())?;
        let r = std::fs::read_to_string(tmp.path().join(run).join("report.json")).map_err(|e| e.to_string())?;
        let m = std::fs::read_to_string(tmp.path().join(run).join(METRICS_FILE)).map_err(|e| e.to_string())?;
        Ok((r, m))
    };
    let (ra, ma) = read("a")?;
    let (rb, mb) = read("b")?;
    let (mut va, mut vb) = (Vec::new(), Vec::new());
    metric_values(&serde_json::from_str(&ra).unwrap(), &mut va, String::new());
    metric_values(&serde_json::from_str(&rb).unwrap(), &mut vb, String::new());
    check(va.len() == vb.len(), || "reports differ in shape".into())?;
    for ((ka, a), (_, b)) in va.iter().zip(&vb) {
        check((a - b).abs() <= DRIFT_TOL, || format!("{ka}: {a} vs {b}"))?;
    }
    check(ra == rb && ma == mb, || "reports agree within tolerance but not bitwise".into())?;
    Ok(format!("{} report values bitwise equal", va.len()))
}

/// Fixed benchmark: 32^3 phantoms, 200 train / 50 val / 60 test.
fn bench_phantom() -> PhantomConfig {
    PhantomConfig {
        volume_shape: [32, 32, 32],
        organ_radius_range: [4.0, 6.0],
        tumor_radius_range: [2.5, 3.5],
        tumor_contrast: 0.5,
        noise_sigma: 0.25,
        distractor_count: 4,
        distractor_max_gap: Some(3.0),
        ..Default::default()
    }
}

fn bench_config(seed: u64) -> ExperimentConfig {
    let t = TrainConfig { epochs: 20, warmup_epochs: 1, lr: 2e-3, batch_size: 4, ..Default::default() };
    ExperimentConfig {
        seed,
        full_fraction: 0.3,
        roi: RoiSpec { margin: [2, 2, 1], target_shape: [16, 16, 16] },
        network: NetworkConfig { stages: 3, base_channels: 4, text_dim: 128, ..Default::default() },
        teacher: TrainConfig { epochs: 40, ..t.clone() },
        student: t,
        analyze_weak_dice: true,
        ..Default::default()
    }
}

#[derive(Debug, Default)]
struct SeedResult {
    weak_only: f64,
    full: f64,
    wssl: f64,
    no_text: f64,
    teacher_text: f64,
    teacher_plain: f64,
}

fn bench_seed(root: &Path, seed: u64) -> std::result::Result<SeedResult, String> {
    let err = |e: wssl_core::error::Error| e.to_string();
    let data = root.join(format!("data{seed}"));
    generate_dataset(&bench_phantom(), 310, [200.0 / 310.0, 50.0 / 310.0, 60.0 / 310.0], seed, &data).map_err(err)?;
    let m = Manifest::read(&data).map_err(err)?;
    let sizes: Vec<usize> = Split::ALL.iter().map(|s| m.split(*s).count()).collect();
    check(sizes == [200, 50, 60], || format!("split sizes {sizes:?}"))?;

    let cfg = bench_config(seed);
    let test_auc = |r: &wssl_core::pipeline::run::RunReport| r.test.auc.ok_or("undefined test auc".to_string());
    let run = |name: &str| -> std::result::Result<f64, String> {
        let (mode, c) = resolve_baseline(name, cfg.clone()).map_err(err)?;
        test_auc(&run_mode(&data, &root.join(format!("{name}{seed}")), c, mode, None).map_err(err)?)
    };
    let weak_only = run("weak-only")?;
    let full = run("full-x")?;

    let wssl_dir = root.join(format!("wssl{seed}"));
    let wssl = run_wssl(&data, &wssl_dir, cfg.clone()).map_err(err)?;
    let teacher_text = wssl.weak_teacher_dice.as_ref().and_then(|d| d.overall).ok_or("no weak dice")?;

    // same teacher and pseudo masks, text term off in the student
    let (mode, c) = resolve_baseline("wssl-no-text", cfg.clone()).map_err(err)?;
    let no_text =
        run_mode(&data, &root.join(format!("no_text{seed}")), c, mode, Some(&wssl_dir.join("pseudo_masks"))).map_err(err)?;

    let mut plain = cfg.clone();
    plain.loss.lambda = 0.0;
    let exp = Experiment::open(&data, &root.join(format!("plain{seed}")), plain).map_err(err)?;
    let teacher = exp.train_teacher().map_err(err)?;
    let teacher_plain = exp
        .analyze_weak_dice(&teacher.model)
        .map_err(err)?
        .and_then(|d| d.overall)
        .ok_or("no weak dice")?;

    Ok(SeedResult { weak_only, full, wssl: test_auc(&wssl)?, no_text: test_auc(&no_text)?, teacher_text, teacher_plain })
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn run_benchmark() -> std::result::Result<Vec<SeedResult>, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut out = Vec::new();
    for seed in BENCH_SEEDS {
        let t = Instant::now();
        let r = bench_seed(tmp.path(), seed)?;
        println!("  benchmark seed {seed} ({:.0}s): {r:?}", t.elapsed().as_secs_f64());
        out.push(r);
    }
    Ok(out)
}

fn c5_auc_trend(b: &[SeedResult]) -> Outcome {
    let (wo, full, wssl, nt) = (
        mean(b.iter().map(|r| r.weak_only)),
        mean(b.iter().map(|r| r.full)),
        mean(b.iter().map(|r| r.wssl)),
        mean(b.iter().map(|r| r.no_text)),
    );
    let summary = format!("mean test AUC weak-only {wo:.4}, full {full:.4}, wssl {wssl:.4}, no-text {nt:.4}");
    check(wo < full, || format!("{summary}: weak-only not below full"))?;
    check(full <= wssl, || format!("{summary}: full above wssl"))?;
    check(wssl >= nt - TREND_SLACK, || format!("{summary}: text below no-text by more than {TREND_SLACK}"))?;
    Ok(summary)
}

fn c6_teacher_trend(b: &[SeedResult]) -> Outcome {
    let (text, plain) = (mean(b.iter().map(|r| r.teacher_text)), mean(b.iter().map(|r| r.teacher_plain)));
    let wins = b.iter().filter(|r| r.teacher_text > r.teacher_plain).count();
    let summary = format!("mean weak-set Dice text {text:.4}, plain {plain:.4}, text higher in {wins}/{}", b.len());
    check(text >= plain - TREND_SLACK, || format!("{summary}: text teacher below plain by more than {TREND_SLACK}"))?;
    check(3 * wins >= 2 * b.len(), || format!("{summary}: too few seed wins"))?;
    Ok(summary)
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect());
    let wanted = |i: usize| only.as_ref().is_none_or(|o| o.contains(&i));
    let mut failed = 0;
    let mut report = |i: usize, name: &str, f: &dyn Fn() -> Outcome| {
        if !wanted(i) {
            return;
        }
        let t = Instant::now();
        let res = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f))
            .unwrap_or_else(|_| Err("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        match res {
            Ok(msg) => println!("criterion {i} {name}: PASS ({msg}; {secs:.1}s)"),
            Err(msg) => {
                failed += 1;
                println!("criterion {i} {name}: FAIL ({msg}; {secs:.1}s)");
            }
        }
    };
    report(1, "loss oracles", &c1_loss_oracles);
    report(2, "gradient checks", &c2_gradient_checks);
    report(3, "metric oracles", &c3_metric_oracles);
    report(4, "softmax invariants", &c4_softmax_invariants);

    if wanted(5) || wanted(6) {
        let t = Instant::now();
        let bench = run_benchmark();
        println!("  benchmark total {:.0}s", t.elapsed().as_secs_f64());
        let bench = &bench;
        let on_bench = |f: fn(&[SeedResult]) -> Outcome| {
            move || bench.as_ref().map_err(|e| format!("benchmark failed: {e}")).and_then(|b| f(b))
        };
        report(5, "pipeline AUC trend", &on_bench(c5_auc_trend));
        report(6, "teacher Dice trend", &on_bench(c6_teacher_trend));
    }

    report(7, "pseudo-mask hygiene", &c7_pseudo_hygiene);
    report(8, "ROI and normalization", &c8_roi_and_normalize);
    report(9, "determinism", &c9_determinism);

    if failed > 0 {
        println!("acceptance: {failed} criteria failed");
        std::process::exit(1);
    }
    println!("acceptance: all selected criteria passed");
}
