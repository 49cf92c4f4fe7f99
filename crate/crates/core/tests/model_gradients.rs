use wssl_core::grid::Dims;
use wssl_core::losses::{objective, ObjectiveWeights, PromptSet, Targets, WeakLabels};
use wssl_core::model::{BackboneConfig, HeadSet, Model, ModelConfig};
use wssl_core::nn::conv::PadMode;
use wssl_core::nn::{HasParams, Tensor};
use wssl_core::text::{assemble_text_matrices, LabelVocabulary, TextEmbeddingTable, TextMatrices};

fn config() -> ModelConfig {
    ModelConfig {
        backbone: BackboneConfig {
            stages: 3,
            base_channels: 2,
            input_shape: [8, 8, 4],
            padding: PadMode::Zero,
        },
        heads: HeadSet {
            seg: true,
            det: true,
            loc: true,
            text: true,
        },
        det_channels: 3,
        text_dim: 6,
        temp_init: 0.5,
        seed: 11,
        ..Default::default()
    }
}

fn input(d: Dims) -> Tensor<f64> {
    let data = (0..d.len()).map(|i| ((i * 7 + 3) as f64 * 0.37).sin() + 0.2 * (i % 5) as f64).collect();
    Tensor::from_vec(1, d, data)
}

fn mask(d: Dims) -> Vec<u8> {
    (0..d.len()).map(|i| (i % 9 < 3) as u8).collect()
}

fn mats(dim: usize) -> TextMatrices {
    let vocab = LabelVocabulary::default();
    assemble_text_matrices(&TextEmbeddingTable::pseudo(&vocab, dim).unwrap(), &vocab).unwrap()
}

fn weights() -> ObjectiveWeights {
    ObjectiveWeights {
        seg: Some(1.0),
        det: Some(0.7),
        loc_cls: Some(0.3),
        text: Some(0.5),
        prompts: PromptSet::DetLoc,
    }
}

fn loss(m: &Model<f64>, x: &Tensor<f64>, mk: &[u8], tm: &TextMatrices) -> f64 {
    let (out, _) = m.forward(x).unwrap();
    let labels = WeakLabels { diagnosis: 1, location: 2 };
    let t = Targets { mask: Some(mk), labels };
    objective(&out.to_values(), t, Some(tm), &m.temperatures(), &weights(), 1e-5)
        .unwrap()
        .parts
        .total
}

#[test]
fn backward_matches_central_differences() {
    let cfg = config();
    let mut m = Model::<f64>::new(cfg.clone()).unwrap();
    let x = input(cfg.backbone.input_dims());
    let mk = mask(cfg.backbone.input_dims());
    let tm = mats(cfg.text_dim);

    let (out, cache) = m.forward(&x).unwrap();
    let labels = WeakLabels { diagnosis: 1, location: 2 };
    let t = Targets { mask: Some(&mk), labels };
    let obj = objective(&out.to_values(), t, Some(&tm), &m.temperatures(), &weights(), 1e-5).unwrap();
    m.zero_grad();
    m.backward(&cache, &out, &obj.grads);

    let mut analytic: Vec<(String, usize, f64)> = Vec::new();
    m.visit(&mut |p| {
        for &j in &[0usize, p.len() / 2, p.len() - 1] {
            analytic.push((p.name.clone(), j, p.grad[j]));
        }
    });
    assert!(analytic.iter().any(|(n, _, _)| n.starts_with("enc0.0.conv.weight")));

    let h = 1e-5;
    let mut checked = 0;
    for (name, j, g) in analytic {
        let set = |m: &mut Model<f64>, delta: f64| {
            m.visit_mut(&mut |p| {
                if p.name == name {
                    p.value[j] += delta;
                }
            })
        };
        set(&mut m, h);
        let lp = loss(&m, &x, &mk, &tm);
        set(&mut m, -2.0 * h);
        let lm = loss(&m, &x, &mk, &tm);
        set(&mut m, h);
        let fd = (lp - lm) / (2.0 * h);
        // biases feeding a norm have exactly zero gradient; allow FD noise there
        assert!((fd - g).abs() <= 1e-5 * fd.abs().max(g.abs()) + 1e-9, "{name}[{j}]: analytic {g}, numeric {fd}");
        checked += 1;
    }
    assert!(checked > 50);
}

#[test]
fn projectors_are_independent() {
    let cfg = config();
    let m = Model::<f64>::new(cfg.clone()).unwrap();
    let x = input(cfg.backbone.input_dims());
    let (a, _) = m.forward(&x).unwrap();
    let mut m2 = m.clone();
    m2.proj_det.as_mut().unwrap().fc.weight.value[0] += 0.5;
    let (b, _) = m2.forward(&x).unwrap();
    assert_eq!(a.i_loc, b.i_loc);
    assert_ne!(a.i_det, b.i_det);
}

#[test]
fn zero_fc_weights_give_bias_logits() {
    let cfg = config();
    let mut m = Model::<f64>::new(cfg.clone()).unwrap();
    let det = m.det.as_mut().unwrap();
    det.fc.weight.value.iter_mut().for_each(|w| *w = 0.0);
    det.fc.bias.value = vec![0.25, -1.5];
    for s in [0.0, 1.0] {
        let mut x = input(cfg.backbone.input_dims());
        x.data.iter_mut().for_each(|v| *v += s);
        let (out, _) = m.forward(&x).unwrap();
        assert_eq!(out.det_logits.unwrap(), [0.25, -1.5]);
    }
}

#[test]
fn zero_seg_weights_give_uniform_logits() {
    let cfg = config();
    let mut m = Model::<f64>::new(cfg.clone()).unwrap();
    let seg = m.seg.as_mut().unwrap();
    seg.weight.value.iter_mut().for_each(|w| *w = 0.0);
    let (out, _) = m.forward(&input(cfg.backbone.input_dims())).unwrap();
    let probs = out.foreground_probs().unwrap();
    assert!(probs.iter().all(|&p| (p - 0.5).abs() < 1e-15));
}

#[test]
fn param_count_matches_layer_arithmetic() {
    let cfg = ModelConfig {
        backbone: BackboneConfig {
            stages: 4,
            base_channels: 8,
            input_shape: [32, 32, 32],
            padding: PadMode::Zero,
        },
        det_channels: 64,
        text_dim: 768,
        heads: HeadSet {
            seg: true,
            det: true,
            loc: true,
            text: true,
        },
        ..Default::default()
    };
    let m = Model::<f32>::new(cfg).unwrap();
    // conv3 (w + b) followed by norm (gamma + beta)
    let unit = |cin: usize, cout: usize| cin * cout * 27 + cout + 2 * cout;
    let ch = [8usize, 16, 32, 64];
    let mut n = 0;
    for l in 0..4 {
        let cin = if l == 0 { 1 } else { ch[l - 1] };
        n += unit(cin, ch[l]) + unit(ch[l], ch[l]);
    }
    for l in (0..3).rev() {
        n += unit(ch[l + 1] + ch[l], ch[l]) + unit(ch[l], ch[l]);
    }
    n += 8 * 2 + 2;
    let pool_head = |mid: usize, out: usize| 120 * mid * 27 + mid + mid * out + out;
    n += pool_head(64, 2) + pool_head(64, 5) + 2 * pool_head(768, 768) + 2;
    assert_eq!(m.param_count(), n);
}
