//! 3D U-Net backbone, multi-scale feature aggregation, and the segmentation,
//! detection, location and text-projection heads.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid::Dims;
use crate::losses::{clamp_log_t, HeadGrads, HeadValues, TextFeatures};
use crate::nn::conv::{Conv3d, ConvPool, ConvPoolCache, PadMode};
use crate::nn::layers::{self, ConvUnit, Linear, UnitCache};
use crate::nn::{HasParams, Init, Param, Real, Tensor};
use crate::phantom::LOCATION_BINS;
use crate::util::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneConfig {
    pub stages: usize,
    pub base_channels: usize,
    /// `[W, H, Z]`.
    pub input_shape: [usize; 3],
    pub padding: PadMode,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            stages: 4,
            base_channels: 8,
            input_shape: [96, 96, 64],
            padding: PadMode::Zero,
        }
    }
}

impl BackboneConfig {
    pub fn input_dims(&self) -> Dims {
        Dims::from_whz(self.input_shape)
    }

    pub fn channels(&self) -> Vec<usize> {
        (0..self.stages).map(|l| self.base_channels << l).collect()
    }

    /// Spatial size of encoder level `l`.
    pub fn level_dims(&self, l: usize) -> Dims {
        let d = self.input_dims();
        Dims::new(d.z >> l, d.y >> l, d.x >> l)
    }

    /// Channels of decoder feature `F_i`, `i = 0` being the bottleneck.
    pub fn pyramid_channels(&self) -> Vec<usize> {
        let c = self.channels();
        (0..self.stages).map(|i| c[self.stages - 1 - i]).collect()
    }

    pub fn total_channels(&self) -> usize {
        self.channels().iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages < 2 {
            return Err(crate::error::config("backbone needs at least 2 stages"));
        }
        if self.base_channels == 0 {
            return Err(crate::error::config("base_channels must be positive"));
        }
        let f = 1usize << (self.stages - 1);
        for (axis, &n) in ["W", "H", "Z"].iter().zip(&self.input_shape) {
            if n == 0 || n % f != 0 {
                return Err(crate::error::config(format!(
                    "input axis {axis}={n} must be a positive multiple of {f} for {} stages",
                    self.stages
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadSet {
    pub seg: bool,
    pub det: bool,
    /// Standard (non-text) location classifier.
    pub loc: bool,
    /// Two text-space projectors and their temperatures.
    pub text: bool,
}

impl Default for HeadSet {
    fn default() -> Self {
        HeadSet {
            seg: true,
            det: true,
            loc: false,
            text: true,
        }
    }
}

impl HeadSet {
    pub fn needs_aggregate(&self) -> bool {
        self.det || self.loc || self.text
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub heads: HeadSet,
    pub det_channels: usize,
    pub text_dim: usize,
    /// Aggregation size `[W, H, Z]`; defaults to the middle decoder stage.
    pub aggregate_shape: Option<[usize; 3]>,
    /// L2-normalize the projected image features.
    pub normalize_text: bool,
    pub temp_init: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone: BackboneConfig::default(),
            heads: HeadSet::default(),
            det_channels: 64,
            text_dim: 768,
            aggregate_shape: None,
            normalize_text: true,
            temp_init: 0.07,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn aggregate_dims(&self) -> Dims {
        match self.aggregate_shape {
            Some(s) => Dims::from_whz(s),
            None => {
                let s = self.backbone.stages;
                self.backbone.level_dims((s - 1).div_ceil(2))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.heads.det && self.det_channels == 0 || self.heads.loc && self.det_channels == 0 {
            return Err(crate::error::config("det_channels must be positive"));
        }
        if self.heads.text && self.text_dim < 2 {
            return Err(crate::error::config("text_dim must be >= 2"));
        }
        if !(self.heads.seg || self.heads.needs_aggregate()) {
            return Err(crate::error::config("model needs at least one head"));
        }
        if let Some(s) = self.aggregate_shape {
            if s.contains(&0) {
                return Err(crate::error::config("aggregate_shape axes must be positive"));
            }
        }
        Ok(())
    }
}

/// Decoder features `F_0` (bottleneck) to `F_{S-1}` (input resolution).
#[derive(Clone, Debug)]
pub struct FeaturePyramid<T> {
    pub features: Vec<Tensor<T>>,
}

/// Resize every stage to `target` and concatenate along channels.
pub fn aggregate_features<T: Real>(pyramid: &[&Tensor<T>], target: Dims) -> Tensor<T> {
    let resized: Vec<Tensor<T>> = pyramid.iter().map(|f| layers::resize(f, target)).collect();
    let refs: Vec<&Tensor<T>> = resized.iter().collect();
    layers::concat(&refs)
}

/// `ConvPool -> Linear`.
#[derive(Clone, Debug)]
pub struct PoolHead<T> {
    pub pool: ConvPool<T>,
    pub fc: Linear<T>,
}

#[derive(Clone, Debug)]
pub struct PoolHeadCache<T> {
    pool: ConvPoolCache<T>,
    pooled: Vec<T>,
}

impl<T: Real> PoolHead<T> {
    fn new(name: &str, cin: usize, mid: usize, out: usize, pad: PadMode) -> Self {
        PoolHead {
            pool: ConvPool::new(&format!("{name}.conv"), cin, mid, pad),
            fc: Linear::new(&format!("{name}.fc"), mid, out),
        }
    }

    fn init(&mut self, seed: u64) {
        self.pool.init(Init::FanInUniform, seed);
        self.fc.init(seed);
    }

    /// Pooled conv features, before the fully connected layer.
    pub fn pooled(&self, x: &Tensor<T>) -> Vec<T> {
        self.pool.forward(x).0
    }

    fn forward(&self, x: &Tensor<T>) -> (Vec<T>, PoolHeadCache<T>) {
        let (pooled, pool) = self.pool.forward(x);
        let out = self.fc.forward(&pooled);
        (out, PoolHeadCache { pool, pooled })
    }

    fn backward(&mut self, cache: &PoolHeadCache<T>, grad: &[T]) -> Tensor<T> {
        let gp = self.fc.backward(&cache.pooled, grad);
        self.pool.backward(&cache.pool, &gp, true).expect("input gradient")
    }
}

impl<T: Real> HasParams<T> for PoolHead<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.pool.visit(f);
        self.fc.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.pool.visit_mut(f);
        self.fc.visit_mut(f);
    }
}

#[derive(Clone, Debug)]
pub struct Model<T> {
    pub cfg: ModelConfig,
    /// Two units per encoder level.
    pub enc: Vec<[ConvUnit<T>; 2]>,
    /// Two units per decoder step `F_{i-1} -> F_i`, `i = 1..S`.
    pub dec: Vec<[ConvUnit<T>; 2]>,
    pub seg: Option<Conv3d<T>>,
    pub det: Option<PoolHead<T>>,
    pub loc: Option<PoolHead<T>>,
    pub proj_det: Option<PoolHead<T>>,
    pub proj_loc: Option<PoolHead<T>>,
    /// `[log T_loc, log T_det]`.
    pub log_t: Option<Param<T>>,
}

/// Head outputs of one forward pass.
#[derive(Clone, Debug, Default)]
pub struct HeadOutputs<T> {
    /// `(2, Z, Y, X)`: background then foreground logits.
    pub seg_logits: Option<Tensor<T>>,
    pub det_logits: Option<[T; 2]>,
    pub loc_logits: Option<Vec<T>>,
    pub i_det: Option<Vec<T>>,
    pub i_loc: Option<Vec<T>>,
}

impl<T: Real> HeadOutputs<T> {
    pub fn to_values(&self) -> HeadValues {
        let v = |x: &[T]| x.iter().map(|a| a.f64()).collect::<Vec<f64>>();
        HeadValues {
            seg_logits: self.seg_logits.as_ref().map(|t| v(&t.data)),
            det_logits: self.det_logits.map(|d| [d[0].f64(), d[1].f64()]),
            loc_logits: self.loc_logits.as_deref().map(v),
            text: match (&self.i_det, &self.i_loc) {
                (Some(a), Some(b)) => Some(TextFeatures {
                    i_det: v(a),
                    i_loc: v(b),
                }),
                _ => None,
            },
        }
    }

    /// Softmax probability of the cancer class.
    pub fn cancer_score(&self) -> Option<f64> {
        self.det_logits
            .map(|d| crate::losses::sigmoid(d[1].f64() - d[0].f64()))
    }

    pub fn foreground_probs(&self) -> Option<Vec<f64>> {
        self.seg_logits.as_ref().map(|t| {
            let n = t.spatial();
            (0..n)
                .map(|v| crate::losses::sigmoid(t.data[n + v].f64() - t.data[v].f64()))
                .collect()
        })
    }
}

/// Encoder caches, skip tensors and decoder caches from one backbone pass.
type BackboneCache<T> = (Vec<[UnitCache<T>; 2]>, Vec<Tensor<T>>, Vec<[UnitCache<T>; 2]>);

struct TextCache<T> {
    head: PoolHeadCache<T>,
    raw_norm: f64,
}

/// Intermediate activations for the backward pass.
pub struct ForwardCache<T> {
    input: Tensor<T>,
    enc: Vec<[UnitCache<T>; 2]>,
    dec_in: Vec<Tensor<T>>,
    dec: Vec<[UnitCache<T>; 2]>,
    agg: Option<Tensor<T>>,
    det: Option<PoolHeadCache<T>>,
    loc: Option<PoolHeadCache<T>>,
    proj_det: Option<TextCache<T>>,
    proj_loc: Option<TextCache<T>>,
}

impl<T> ForwardCache<T> {
    fn pyramid(&self) -> Vec<&Tensor<T>> {
        let mut f = vec![&self.enc.last().expect("levels")[1].out];
        f.extend(self.dec.iter().map(|d| &d[1].out));
        f
    }
}

impl<T: Real> Model<T> {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let b = &cfg.backbone;
        let ch = b.channels();
        let pad = b.padding;
        let s = b.stages;
        let mut enc = Vec::with_capacity(s);
        for l in 0..s {
            let (cin, stride) = if l == 0 { (1, 1) } else { (ch[l - 1], 2) };
            enc.push([
                ConvUnit::new(&format!("enc{l}.0"), cin, ch[l], stride, pad),
                ConvUnit::new(&format!("enc{l}.1"), ch[l], ch[l], 1, pad),
            ]);
        }
        let mut dec = Vec::with_capacity(s - 1);
        for i in 1..s {
            let l = s - 1 - i;
            dec.push([
                ConvUnit::new(&format!("dec{i}.0"), ch[l + 1] + ch[l], ch[l], 1, pad),
                ConvUnit::new(&format!("dec{i}.1"), ch[l], ch[l], 1, pad),
            ]);
        }
        let ct = b.total_channels();
        let h = cfg.heads;
        let head = |on: bool, name: &str, mid: usize, out: usize| on.then(|| PoolHead::new(name, ct, mid, out, pad));
        let mut log_t = None;
        if h.text {
            let lt = clamp_log_t(cfg.temp_init.ln());
            let mut p = Param::filled("text.log_t", &[2], T::of(lt));
            p.decay = false;
            log_t = Some(p);
        }
        let mut m = Model {
            seg: h.seg.then(|| Conv3d::new("seg.conv", ch[0], 2, 1, 1, pad)),
            det: head(h.det, "det", cfg.det_channels, 2),
            loc: head(h.loc, "loc", cfg.det_channels, LOCATION_BINS + 1),
            proj_det: head(h.text, "proj_det", cfg.text_dim, cfg.text_dim),
            proj_loc: head(h.text, "proj_loc", cfg.text_dim, cfg.text_dim),
            cfg,
            enc,
            dec,
            log_t,
        };
        m.init();
        Ok(m)
    }

    fn init(&mut self) {
        let seed = derive_seed(self.cfg.seed, 0x6d6f64656c);
        for u in self.enc.iter_mut().chain(self.dec.iter_mut()).flatten() {
            u.init(seed);
        }
        if let Some(s) = &mut self.seg {
            s.init(Init::FanInUniform, seed);
        }
        for h in [&mut self.det, &mut self.loc, &mut self.proj_det, &mut self.proj_loc]
            .into_iter()
            .flatten()
        {
            h.init(seed);
        }
    }

    pub fn temperatures(&self) -> crate::losses::Temperatures {
        match &self.log_t {
            Some(p) => crate::losses::Temperatures {
                log_t_loc: p.value[0].f64(),
                log_t_det: p.value[1].f64(),
            },
            None => crate::losses::Temperatures::new(self.cfg.temp_init, self.cfg.temp_init),
        }
    }

    /// Keep the temperatures inside their allowed range after an update.
    pub fn clamp_temperatures(&mut self) {
        if let Some(p) = &mut self.log_t {
            for v in p.value.iter_mut() {
                *v = T::of(clamp_log_t(v.f64()));
            }
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let d = self.cfg.backbone.input_dims();
        if x.c != 1 || x.dims != d {
            return Err(invalid(format!(
                "model expects a 1-channel {d} input, got {} channels of {}",
                x.c, x.dims
            )));
        }
        Ok(())
    }

    fn run_backbone(&self, x: &Tensor<T>) -> BackboneCache<T> {
        let mut enc: Vec<[UnitCache<T>; 2]> = Vec::with_capacity(self.enc.len());
        for (l, units) in self.enc.iter().enumerate() {
            let input = if l == 0 { x } else { &enc[l - 1][1].out };
            let a = units[0].forward(input);
            let b = units[1].forward(&a.out);
            enc.push([a, b]);
        }
        let s = self.enc.len();
        let mut dec_in = Vec::with_capacity(s - 1);
        let mut dec: Vec<[UnitCache<T>; 2]> = Vec::with_capacity(s - 1);
        for (k, units) in self.dec.iter().enumerate() {
            let l = s - 2 - k;
            let prev = if k == 0 { &enc[s - 1][1].out } else { &dec[k - 1][1].out };
            let skip = &enc[l][1].out;
            let up = layers::resize(prev, skip.dims);
            let cat = layers::concat(&[&up, skip]);
            let a = units[0].forward(&cat);
            let b = units[1].forward(&a.out);
            dec_in.push(cat);
            dec.push([a, b]);
        }
        (enc, dec_in, dec)
    }

    pub fn forward_backbone(&self, x: &Tensor<T>) -> Result<FeaturePyramid<T>> {
        self.check_input(x)?;
        let (enc, _, dec) = self.run_backbone(x);
        let mut features = vec![enc.last().expect("levels")[1].out.clone()];
        features.extend(dec.into_iter().map(|[_, b]| b.out));
        Ok(FeaturePyramid { features })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(HeadOutputs<T>, ForwardCache<T>)> {
        self.check_input(x)?;
        let (enc, dec_in, dec) = self.run_backbone(x);
        let mut cache = ForwardCache {
            input: x.clone(),
            enc,
            dec_in,
            dec,
            agg: None,
            det: None,
            loc: None,
            proj_det: None,
            proj_loc: None,
        };
        let mut out = HeadOutputs::default();
        if let Some(seg) = &self.seg {
            let last = cache.pyramid().last().copied().expect("levels");
            out.seg_logits = Some(seg.forward(last));
        }
        if self.cfg.heads.needs_aggregate() {
            let agg = aggregate_features(&cache.pyramid(), self.cfg.aggregate_dims());
            if let Some(h) = &self.det {
                let (v, c) = h.forward(&agg);
                out.det_logits = Some([v[0], v[1]]);
                cache.det = Some(c);
            }
            if let Some(h) = &self.loc {
                let (v, c) = h.forward(&agg);
                out.loc_logits = Some(v);
                cache.loc = Some(c);
            }
            for (h, slot, dst) in [
                (&self.proj_det, &mut cache.proj_det, &mut out.i_det),
                (&self.proj_loc, &mut cache.proj_loc, &mut out.i_loc),
            ] {
                if let Some(h) = h {
                    let (v, c) = h.forward(&agg);
                    let (v, raw_norm) = if self.cfg.normalize_text {
                        layers::l2_normalize(&v)
                    } else {
                        (v, 1.0)
                    };
                    *dst = Some(v);
                    *slot = Some(TextCache { head: c, raw_norm });
                }
            }
            cache.agg = Some(agg);
        }
        Ok((out, cache))
    }

    /// Accumulate parameter gradients for upstream gradients `grads` on the
    /// head outputs of the pass that produced `cache` and `out`.
    pub fn backward(&mut self, cache: &ForwardCache<T>, out: &HeadOutputs<T>, grads: &HeadGrads) {
        let s = self.enc.len();
        let pyr_dims: Vec<Dims> = cache.pyramid().iter().map(|f| f.dims).collect();
        let pyr_ch = self.cfg.backbone.pyramid_channels();
        let mut d_f: Vec<Option<Tensor<T>>> = vec![None; s];
        let add = |slot: &mut Option<Tensor<T>>, g: Tensor<T>| match slot {
            Some(t) => t.add_assign(&g),
            None => *slot = Some(g),
        };
        let to_t = |v: &[f64]| v.iter().map(|&a| T::of(a)).collect::<Vec<T>>();

        if let (Some(seg), Some(g)) = (&mut self.seg, &grads.seg_logits) {
            let last = cache.pyramid()[s - 1];
            let gt = Tensor::from_vec(2, last.dims, to_t(g));
            add(&mut d_f[s - 1], seg.backward(last, &gt, true).expect("input gradient"));
        }

        if let Some(agg) = &cache.agg {
            let mut d_agg: Option<Tensor<T>> = None;
            if let (Some(h), Some(c), Some(g)) = (&mut self.det, &cache.det, &grads.det_logits) {
                add(&mut d_agg, h.backward(c, &to_t(g)));
            }
            if let (Some(h), Some(c), Some(g)) = (&mut self.loc, &cache.loc, &grads.loc_logits) {
                add(&mut d_agg, h.backward(c, &to_t(g)));
            }
            let normalize = self.cfg.normalize_text;
            for (h, c, y, g) in [
                (&mut self.proj_det, &cache.proj_det, &out.i_det, &grads.i_det),
                (&mut self.proj_loc, &cache.proj_loc, &out.i_loc, &grads.i_loc),
            ] {
                if let (Some(h), Some(c), Some(y), Some(g)) = (h, c, y, g) {
                    let g = to_t(g);
                    let g = if normalize {
                        layers::l2_normalize_backward(y, c.raw_norm, &g)
                    } else {
                        g
                    };
                    add(&mut d_agg, h.backward(&c.head, &g));
                }
            }
            if let Some(p) = &mut self.log_t {
                p.grad[0] = p.grad[0] + T::of(grads.log_t_loc);
                p.grad[1] = p.grad[1] + T::of(grads.log_t_det);
            }
            if let Some(d) = d_agg {
                debug_assert_eq!(d.dims, agg.dims);
                for (i, part) in layers::split(&d, &pyr_ch).into_iter().enumerate() {
                    add(&mut d_f[i], layers::resize_backward(&part, pyr_dims[i]));
                }
            }
        }

        // decoder, last step first
        let ch = self.cfg.backbone.channels();
        let mut d_skip: Vec<Option<Tensor<T>>> = vec![None; s];
        for k in (0..s - 1).rev() {
            let i = k + 1;
            let Some(g) = d_f[i].take() else { continue };
            let l = s - 2 - k;
            let [ca, cb] = &cache.dec[k];
            let [ua, ub] = &mut self.dec[k];
            let g = ub.backward(&ca.out, cb, &g, true).expect("input gradient");
            let g = ua.backward(&cache.dec_in[k], ca, &g, true).expect("input gradient");
            let mut parts = layers::split(&g, &[ch[l + 1], ch[l]]).into_iter();
            let g_up = parts.next().expect("two parts");
            let g_skip = parts.next().expect("two parts");
            add(&mut d_f[i - 1], layers::resize_backward(&g_up, pyr_dims[i - 1]));
            add(&mut d_skip[l], g_skip);
        }

        // encoder, deepest level first
        let mut g_next: Option<Tensor<T>> = d_f[0].take();
        for l in (0..s).rev() {
            let mut g = g_next.take();
            if let Some(sk) = d_skip[l].take() {
                add(&mut g, sk);
            }
            let Some(g) = g else { continue };
            let [ca, cb] = &cache.enc[l];
            let [ua, ub] = &mut self.enc[l];
            let g = ub.backward(&ca.out, cb, &g, true).expect("input gradient");
            let input = if l == 0 { &cache.input } else { &cache.enc[l - 1][1].out };
            g_next = ua.backward(input, ca, &g, l > 0);
        }
    }

    /// Named parameters in a fixed order.
    pub fn named_params(&self) -> Vec<(&str, &[usize], &[T])> {
        let mut v = Vec::new();
        self.visit_ref_all(&mut |p| v.push((p.name.as_str(), p.shape.as_slice(), p.value.as_slice())));
        v
    }

    fn visit_ref_all<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        for u in self.enc.iter().chain(&self.dec).flatten() {
            for p in [&u.conv.weight, &u.conv.bias, &u.norm.gamma, &u.norm.beta] {
                f(p);
            }
        }
        if let Some(s) = &self.seg {
            f(&s.weight);
            f(&s.bias);
        }
        for h in [&self.det, &self.loc, &self.proj_det, &self.proj_loc].into_iter().flatten() {
            for p in [&h.pool.weight, &h.pool.bias, &h.fc.weight, &h.fc.bias] {
                f(p);
            }
        }
        if let Some(p) = &self.log_t {
            f(p);
        }
    }
}

impl<T: Real> HasParams<T> for Model<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.visit_ref_all(&mut |p| f(p));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        for u in self.enc.iter_mut().chain(self.dec.iter_mut()).flatten() {
            u.visit_mut(f);
        }
        if let Some(s) = &mut self.seg {
            s.visit_mut(f);
        }
        for h in [&mut self.det, &mut self.loc, &mut self.proj_det, &mut self.proj_loc]
            .into_iter()
            .flatten()
        {
            h.visit_mut(f);
        }
        if let Some(p) = &mut self.log_t {
            f(p);
        }
    }
}

/// Network input from a preprocessed volume.
pub fn input_tensor<T: Real>(v: &crate::grid::Volume) -> Tensor<T> {
    Tensor::from_vec(1, v.dims(), v.data().iter().map(|&x| T::of(x as f64)).collect())
}
