use super::conv::{Conv3d, PadMode};
use super::{init_param, HasParams, Init, Param, Real, Tensor};
use crate::grid::Dims;
use crate::interp;

pub const NORM_EPS: f64 = 1e-5;

/// Per-instance, per-channel normalization with a learned affine map.
#[derive(Clone, Debug)]
pub struct InstanceNorm<T> {
    pub c: usize,
    pub gamma: Param<T>,
    pub beta: Param<T>,
}

/// Per-channel `(mean, 1/std)` from the forward pass.
pub type NormStats = Vec<(f64, f64)>;

impl<T: Real> InstanceNorm<T> {
    pub fn new(name: &str, c: usize) -> Self {
        InstanceNorm {
            c,
            gamma: Param::filled(format!("{name}.gamma"), &[c], T::one()),
            beta: Param::zeros(format!("{name}.beta"), &[c]),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> (Tensor<T>, NormStats) {
        let n = x.spatial() as f64;
        let mut out = Tensor::zeros(x.c, x.dims);
        let mut stats = Vec::with_capacity(x.c);
        for c in 0..x.c {
            let xc = x.channel(c);
            let mean = xc.iter().map(|v| v.f64()).sum::<f64>() / n;
            let var = xc.iter().map(|v| (v.f64() - mean).powi(2)).sum::<f64>() / n;
            let inv = 1.0 / (var + NORM_EPS).sqrt();
            let (g, b) = (self.gamma.value[c].f64(), self.beta.value[c].f64());
            for (o, &v) in out.channel_mut(c).iter_mut().zip(xc) {
                *o = T::of(g * (v.f64() - mean) * inv + b);
            }
            stats.push((mean, inv));
        }
        (out, stats)
    }

    pub fn backward(&mut self, x: &Tensor<T>, stats: &NormStats, grad_out: &Tensor<T>) -> Tensor<T> {
        let n = x.spatial() as f64;
        let mut gx = Tensor::zeros(x.c, x.dims);
        for c in 0..x.c {
            let (mean, inv) = stats[c];
            let g = self.gamma.value[c].f64();
            let xc = x.channel(c);
            let dy = grad_out.channel(c);
            let mut sum_dy = 0.0;
            let mut sum_dy_xh = 0.0;
            for (&v, &d) in xc.iter().zip(dy) {
                let xh = (v.f64() - mean) * inv;
                sum_dy += d.f64();
                sum_dy_xh += d.f64() * xh;
            }
            self.gamma.grad[c] = self.gamma.grad[c] + T::of(sum_dy_xh);
            self.beta.grad[c] = self.beta.grad[c] + T::of(sum_dy);
            let k = g * inv / n;
            for ((o, &v), &d) in gx.channel_mut(c).iter_mut().zip(xc).zip(dy) {
                let xh = (v.f64() - mean) * inv;
                *o = T::of(k * (n * d.f64() - sum_dy - xh * sum_dy_xh));
            }
        }
        gx
    }
}

impl<T: Real> HasParams<T> for InstanceNorm<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.gamma);
        f(&self.beta);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.gamma);
        f(&mut self.beta);
    }
}

/// Convolution, instance norm, ReLU.
#[derive(Clone, Debug)]
pub struct ConvUnit<T> {
    pub conv: Conv3d<T>,
    pub norm: InstanceNorm<T>,
}

#[derive(Clone, Debug)]
pub struct UnitCache<T> {
    /// Convolution output before normalization.
    pub pre: Tensor<T>,
    pub stats: NormStats,
    pub out: Tensor<T>,
}

impl<T: Real> ConvUnit<T> {
    pub fn new(name: &str, cin: usize, cout: usize, stride: usize, pad: PadMode) -> Self {
        ConvUnit {
            conv: Conv3d::new(&format!("{name}.conv"), cin, cout, 3, stride, pad),
            norm: InstanceNorm::new(&format!("{name}.norm"), cout),
        }
    }

    pub fn init(&mut self, seed: u64) {
        self.conv.init(Init::He, seed);
    }

    pub fn forward(&self, x: &Tensor<T>) -> UnitCache<T> {
        let pre = self.conv.forward(x);
        let (mut out, stats) = self.norm.forward(&pre);
        out.data.iter_mut().for_each(|v| *v = v.max(T::zero()));
        UnitCache { pre, stats, out }
    }

    pub fn backward(&mut self, x: &Tensor<T>, cache: &UnitCache<T>, grad_out: &Tensor<T>, need_input: bool) -> Option<Tensor<T>> {
        let mut g = grad_out.clone();
        for (d, &o) in g.data.iter_mut().zip(&cache.out.data) {
            if o <= T::zero() {
                *d = T::zero();
            }
        }
        let gp = self.norm.backward(&cache.pre, &cache.stats, &g);
        self.conv.backward(x, &gp, need_input)
    }
}

impl<T: Real> HasParams<T> for ConvUnit<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.conv.visit(f);
        self.norm.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.conv.visit_mut(f);
        self.norm.visit_mut(f);
    }
}

#[derive(Clone, Debug)]
pub struct Linear<T> {
    pub din: usize,
    pub dout: usize,
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Real> Linear<T> {
    pub fn new(name: &str, din: usize, dout: usize) -> Self {
        Linear {
            din,
            dout,
            weight: Param::zeros(format!("{name}.weight"), &[dout, din]),
            bias: Param::zeros(format!("{name}.bias"), &[dout]),
        }
    }

    pub fn init(&mut self, seed: u64) {
        init_param(&mut self.weight, Init::FanInUniform, self.din, seed);
        init_param(&mut self.bias, Init::FanInUniform, self.din, seed);
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.din, "{}: input length", self.weight.name);
        (0..self.dout)
            .map(|o| {
                let w = &self.weight.value[o * self.din..(o + 1) * self.din];
                self.bias.value[o] + w.iter().zip(x).map(|(&a, &b)| a * b).sum::<T>()
            })
            .collect()
    }

    pub fn backward(&mut self, x: &[T], grad_out: &[T]) -> Vec<T> {
        let mut gx = vec![T::zero(); self.din];
        for (o, &g) in grad_out.iter().enumerate() {
            self.bias.grad[o] = self.bias.grad[o] + g;
            let w = &self.weight.value[o * self.din..(o + 1) * self.din];
            let gw = &mut self.weight.grad[o * self.din..(o + 1) * self.din];
            for j in 0..self.din {
                gw[j] = gw[j] + g * x[j];
                gx[j] = gx[j] + g * w[j];
            }
        }
        gx
    }
}

impl<T: Real> HasParams<T> for Linear<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.weight);
        f(&self.bias);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

/// Trilinear resize of every channel.
pub fn resize<T: Real>(x: &Tensor<T>, to: Dims) -> Tensor<T> {
    if x.dims == to {
        return x.clone();
    }
    let mut data = Vec::with_capacity(x.c * to.len());
    for c in 0..x.c {
        data.extend(interp::resize(x.channel(c), x.dims, to));
    }
    Tensor::from_vec(x.c, to, data)
}

pub fn resize_backward<T: Real>(grad: &Tensor<T>, from: Dims) -> Tensor<T> {
    if grad.dims == from {
        return grad.clone();
    }
    let mut data = Vec::with_capacity(grad.c * from.len());
    for c in 0..grad.c {
        data.extend(interp::resize_adjoint(grad.channel(c), from, grad.dims));
    }
    Tensor::from_vec(grad.c, from, data)
}

pub fn concat<T: Real>(parts: &[&Tensor<T>]) -> Tensor<T> {
    let dims = parts[0].dims;
    let mut c = 0;
    let mut data = Vec::new();
    for p in parts {
        assert_eq!(p.dims, dims, "concat spatial dims");
        c += p.c;
        data.extend_from_slice(&p.data);
    }
    Tensor::from_vec(c, dims, data)
}

/// Inverse of [`concat`] on a gradient.
pub fn split<T: Real>(x: &Tensor<T>, channels: &[usize]) -> Vec<Tensor<T>> {
    let n = x.spatial();
    let mut off = 0;
    channels
        .iter()
        .map(|&c| {
            let t = Tensor::from_vec(c, x.dims, x.data[off * n..(off + c) * n].to_vec());
            off += c;
            t
        })
        .collect()
}

/// `v / |v|` and its Jacobian-vector product.
pub fn l2_normalize<T: Real>(v: &[T]) -> (Vec<T>, f64) {
    let n = v.iter().map(|x| x.f64().powi(2)).sum::<f64>().sqrt().max(1e-12);
    (v.iter().map(|&x| T::of(x.f64() / n)).collect(), n)
}

pub fn l2_normalize_backward<T: Real>(y: &[T], norm: f64, grad: &[T]) -> Vec<T> {
    let dot: f64 = y.iter().zip(grad).map(|(a, b)| a.f64() * b.f64()).sum();
    y.iter()
        .zip(grad)
        .map(|(&a, &g)| T::of((g.f64() - a.f64() * dot) / norm))
        .collect()
}
