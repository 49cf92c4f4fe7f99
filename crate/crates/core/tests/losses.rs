#![allow(clippy::needless_range_loop)]

use proptest::prelude::*;
use wssl_core::losses::{
    det_loss, dice_loss, foreground_probs, objective, seg_loss, similarity, softmax_ce, student_loss,
    teacher_loss, temperature_softmax, text_branch_loss, HeadValues, LossConfig, ObjectiveWeights, PromptSet,
    Targets, Temperatures, TextFeatures, WeakLabels,
};
use wssl_core::text::TextMatrices;

mod common;

use common::*;

fn vec_f(n: usize, lo: f64, hi: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(lo..hi, n)
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-4)
}

fn central<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], k: usize, h: f64) -> f64 {
    let mut p = x.to_vec();
    p[k] += h;
    let fp = f(&p);
    p[k] -= 2.0 * h;
    let fm = f(&p);
    (fp - fm) / (2.0 * h)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn dice_loss_matches_formula(
        (p, m) in (1usize..40).prop_flat_map(|n| (vec_f(n, 0.0, 1.0), prop::collection::vec(0u8..2, n))),
    ) {
        let got = dice_loss(&p, &m, 1e-5).unwrap();
        prop_assert!(close(got, naive_dice(&p, &m, 1e-5), 1e-10));
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&got));
    }

    #[test]
    fn seg_loss_matches_formula(
        (l, m) in (1usize..30).prop_flat_map(|n| (vec_f(2 * n, -6.0, 6.0), prop::collection::vec(0u8..2, n))),
    ) {
        let out = seg_loss(&l, &m, 1e-5).unwrap();
        prop_assert!(close(out.value, naive_seg(&l, &m, 1e-5), 1e-10));
        prop_assert!(close(out.value, out.ce + out.dice, 1e-12));
    }

    #[test]
    fn det_loss_matches_formula(a in -8.0..8.0f64, b in -8.0..8.0f64, y in 0u8..2) {
        let out = det_loss(&[a, b], y).unwrap();
        prop_assert!(close(out.value, naive_ce(&[a, b], y as usize), 1e-10));
        prop_assert!(close(out.probs.iter().sum::<f64>(), 1.0, 1e-12));
    }

    #[test]
    fn text_branch_matches_formula(
        (i, e, y) in (2usize..10, 2usize..6).prop_flat_map(|(d, k)| (vec_f(d, -1.0, 1.0), vec_f(d * k, -1.0, 1.0), 0..k)),
        log_t in (0.07f64).ln()..(10.0f64).ln(),
    ) {
        let out = text_branch_loss(&i, &e, y, log_t).unwrap();
        prop_assert!(close(out.value, naive_text(&i, &e, y, log_t.exp()), 1e-10));
    }

    #[test]
    fn similarity_is_cosine_on_unit_vectors(a in vec_f(6, -1.0, 1.0), b in vec_f(6, -1.0, 1.0)) {
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assume!(norm(&a) > 1e-3 && norm(&b) > 1e-3);
        let ua: Vec<f64> = a.iter().map(|x| x / norm(&a)).collect();
        let ub: Vec<f64> = b.iter().map(|x| x / norm(&b)).collect();
        let s = similarity(&ua, &ub).unwrap()[0];
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&s));
        prop_assert!(close(similarity(&ua, &ua).unwrap()[0], 1.0, 1e-12));
    }

    #[test]
    fn temperature_softmax_is_a_distribution(s in vec_f(5, -1.0, 1.0), t in 1e-3..10.0f64) {
        let p = temperature_softmax(&s, t).unwrap();
        prop_assert!(close(p.iter().sum::<f64>(), 1.0, 1e-12));
        prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
        // order preserving
        for a in 0..5 {
            for b in 0..5 {
                if s[a] > s[b] {
                    prop_assert!(p[a] >= p[b]);
                }
            }
        }
    }

    #[test]
    fn dice_loss_of_exact_mask_is_zero(m in prop::collection::vec(0u8..2, 1..50)) {
        prop_assume!(m.contains(&1));
        let p: Vec<f64> = m.iter().map(|&x| x as f64).collect();
        prop_assert!(dice_loss(&p, &m, 1e-5).unwrap().abs() < 1e-12);
    }
}

#[test]
fn softmax_ce_is_shift_invariant() {
    let z = [0.3, -1.2, 2.5, 0.0];
    for y in 0..4 {
        let a = softmax_ce(&z, y).unwrap().value;
        let shifted: Vec<f64> = z.iter().map(|v| v + 700.0).collect();
        let b = softmax_ce(&shifted, y).unwrap().value;
        assert!(close(a, b, 1e-10), "{a} {b}");
    }
}

#[test]
fn foreground_probs_are_the_softmax_channel() {
    let l = [0.1, -2.0, 3.0, 0.5, 0.5, -1.0];
    let p = foreground_probs(&l);
    for v in 0..3 {
        assert!(close(p[v], naive_softmax(&[l[v], l[3 + v]])[1], 1e-15));
    }
}

#[test]
fn invalid_inputs_are_rejected() {
    assert!(dice_loss(&[0.5, 0.5], &[1], 1e-5).is_err());
    assert!(seg_loss(&[0.0; 5], &[1, 0], 1e-5).is_err());
    assert!(det_loss(&[0.0, 0.0], 2).is_err());
    assert!(text_branch_loss(&[1.0, 0.0], &[1.0, 0.0, 0.0], 0, 0.0).is_err());
    assert!(text_branch_loss(&[1.0, 0.0], &[1.0, 0.0, 0.0, 1.0], 2, 0.0).is_err());
    assert!(temperature_softmax(&[0.0, 1.0], 0.0).is_err());
}

fn mats(d: usize) -> TextMatrices {
    let e_det = (0..2 * d).map(|k| ((k * 13 + 1) as f64 * 0.71).sin()).collect();
    let e_loc = (0..5 * d).map(|k| ((k * 7 + 2) as f64 * 0.53).cos()).collect();
    TextMatrices { dim: d, e_det, e_loc }
}

#[test]
fn text_branch_gradients_match_central_differences() {
    let (d, k) = (4, 5);
    let e: Vec<f64> = (0..d * k).map(|j| ((j * 5 + 1) as f64 * 0.31).sin()).collect();
    let i = vec![0.2, -0.4, 0.7, 0.1];
    for &lt in &[(0.07f64).ln(), 0.0, (3.0f64).ln()] {
        for y in 0..k {
            let out = text_branch_loss(&i, &e, y, lt).unwrap();
            for c in 0..d {
                let n = central(|x| text_branch_loss(x, &e, y, lt).unwrap().value, &i, c, 1e-4);
                assert!(rel_err(out.grad_i[c], n) < 1e-6, "grad_i[{c}] {} vs {n}", out.grad_i[c]);
            }
            let n = central(|x| text_branch_loss(&i, &e, y, x[0]).unwrap().value, &[lt], 0, 1e-4);
            assert!(rel_err(out.grad_log_t, n) < 1e-6, "log_t {} vs {n}", out.grad_log_t);
        }
    }
}

#[test]
fn objective_gradients_match_central_differences() {
    let d = 3;
    let tm = mats(d);
    let n = 6;
    let seg: Vec<f64> = (0..2 * n).map(|j| ((j * 3 + 2) as f64 * 0.9).sin()).collect();
    let mask = [1u8, 0, 1, 1, 0, 0];
    let feats = TextFeatures {
        i_det: vec![0.3, -0.2, 0.5],
        i_loc: vec![-0.1, 0.4, 0.2],
    };
    let cfg = LossConfig { lambda: 0.3, alpha: 0.2, beta: 0.5, ..Default::default() };
    let labels = WeakLabels { diagnosis: 1, location: 3 };
    let temps = Temperatures::new(0.5, 0.8);
    let weights = [
        ObjectiveWeights::teacher(&cfg, PromptSet::DetLoc),
        ObjectiveWeights::joint(&cfg),
        ObjectiveWeights::student(&cfg, PromptSet::DetLoc),
        ObjectiveWeights::student(&cfg, PromptSet::Loc),
    ];
    let eval = |w: &ObjectiveWeights, seg: &[f64], det: [f64; 2], f: &TextFeatures, t: &Temperatures| {
        let heads = HeadValues {
            seg_logits: Some(seg.to_vec()),
            det_logits: Some(det),
            loc_logits: None,
            text: Some(f.clone()),
        };
        objective(&heads, Targets { mask: Some(&mask), labels }, Some(&tm), t, w, 1e-5).unwrap()
    };
    let det = [0.4, -0.3];
    for w in &weights {
        let out = eval(w, &seg, det, &feats, &temps);
        let g = &out.grads;
        let gs = g.seg_logits.as_ref().unwrap();
        for c in 0..2 * n {
            let num = central(|x| eval(w, x, det, &feats, &temps).parts.total, &seg, c, 1e-4);
            assert!(rel_err(gs[c], num) < 1e-6, "seg[{c}] {} vs {num}", gs[c]);
        }
        if let Some(gd) = g.det_logits {
            for c in 0..2 {
                let num = central(|x| eval(w, &seg, [x[0], x[1]], &feats, &temps).parts.total, &det, c, 1e-4);
                assert!(rel_err(gd[c], num) < 1e-6);
            }
        }
        if let Some(gi) = &g.i_loc {
            for c in 0..d {
                let num = central(
                    |x| {
                        let f = TextFeatures { i_loc: x.to_vec(), ..feats.clone() };
                        eval(w, &seg, det, &f, &temps).parts.total
                    },
                    &feats.i_loc,
                    c,
                    1e-4,
                );
                assert!(rel_err(gi[c], num) < 1e-6);
            }
            let num = central(
                |x| {
                    let t = Temperatures { log_t_loc: x[0], ..temps };
                    eval(w, &seg, det, &feats, &t).parts.total
                },
                &[temps.log_t_loc],
                0,
                1e-4,
            );
            assert!(rel_err(g.log_t_loc, num) < 1e-6);
        }
    }
}

#[test]
fn named_objectives_agree_with_the_generic_one() {
    let tm = mats(3);
    let seg = [0.2, -0.1, 0.4, 1.0, 0.3, -0.5];
    let mask = [1u8, 0, 1];
    let feats = TextFeatures { i_det: vec![0.1, 0.2, 0.3], i_loc: vec![0.3, 0.2, 0.1] };
    let labels = WeakLabels { diagnosis: 1, location: 2 };
    let temps = Temperatures::new(0.07, 0.07);
    let cfg = LossConfig::default();
    let t = teacher_loss(&seg, &mask, &feats, &tm, labels, &temps, &cfg).unwrap();
    let expect_t = seg_loss(&seg, &mask, cfg.dice_smooth).unwrap().value
        + cfg.lambda
            * (naive_text(&feats.i_loc, &tm.e_loc, 2, 0.07) + naive_text(&feats.i_det, &tm.e_det, 1, 0.07));
    assert!(close(t.parts.total, expect_t, 1e-10));
    let s = student_loss(&seg, &mask, &[0.5, -0.5], &feats, &tm, labels, &temps, &cfg).unwrap();
    let expect_s = seg_loss(&seg, &mask, cfg.dice_smooth).unwrap().value
        + cfg.beta * naive_ce(&[0.5, -0.5], 1)
        + cfg.alpha
            * (naive_text(&feats.i_loc, &tm.e_loc, 2, 0.07) + naive_text(&feats.i_det, &tm.e_det, 1, 0.07));
    assert!(close(s.parts.total, expect_s, 1e-10));
}
