//! 3D convolution (im2col + gemm) and the fused convolution + global average
//! pooling head.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use super::{init_param, matmul, HasParams, Init, Param, Real, Tensor};
use crate::grid::Dims;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PadMode {
    Zero,
    Circular,
}

/// Input index read by output `o` at kernel tap `k`, or `None` for padding.
fn axis_taps(n_in: usize, n_out: usize, k: usize, stride: usize, pad: PadMode) -> Vec<Option<usize>> {
    let p = (k / 2) as isize;
    let mut t = Vec::with_capacity(k * n_out);
    for kk in 0..k {
        for o in 0..n_out {
            let i = (o * stride) as isize + kk as isize - p;
            t.push(match pad {
                PadMode::Zero => (i >= 0 && i < n_in as isize).then_some(i as usize),
                PadMode::Circular => Some(i.rem_euclid(n_in as isize) as usize),
            });
        }
    }
    t
}

#[derive(Clone, Debug)]
pub struct Conv3d<T> {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: PadMode,
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Real> Conv3d<T> {
    pub fn new(name: &str, cin: usize, cout: usize, k: usize, stride: usize, pad: PadMode) -> Self {
        assert!(k % 2 == 1 && stride >= 1, "odd kernel and positive stride");
        Conv3d {
            cin,
            cout,
            k,
            stride,
            pad,
            weight: Param::zeros(format!("{name}.weight"), &[cout, cin, k, k, k]),
            bias: Param::zeros(format!("{name}.bias"), &[cout]),
        }
    }

    pub fn init(&mut self, init: Init, seed: u64) {
        init_param(&mut self.weight, init, self.cin * self.k.pow(3), seed);
    }

    pub fn out_dims(&self, d: Dims) -> Dims {
        let f = |n: usize| (n + 2 * (self.k / 2) - self.k) / self.stride + 1;
        Dims::new(f(d.z), f(d.y), f(d.x))
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1
    }

    fn taps(&self, din: Dims, dout: Dims) -> [Vec<Option<usize>>; 3] {
        [
            axis_taps(din.z, dout.z, self.k, self.stride, self.pad),
            axis_taps(din.y, dout.y, self.k, self.stride, self.pad),
            axis_taps(din.x, dout.x, self.k, self.stride, self.pad),
        ]
    }

    fn im2col<'a>(&self, x: &'a Tensor<T>, dout: Dims) -> Cow<'a, [T]> {
        if self.is_pointwise() {
            return Cow::Borrowed(&x.data);
        }
        let ol = dout.len();
        let mut col = vec![T::zero(); self.cin * self.k.pow(3) * ol];
        self.for_each_run(x.dims, dout, |c, row, dst_off, src_off, len, step| {
            let src = &x.data[c * x.dims.len()..];
            let dst = &mut col[row * ol + dst_off..row * ol + dst_off + len];
            if step == 1 {
                dst.copy_from_slice(&src[src_off..src_off + len]);
            } else {
                for (j, v) in dst.iter_mut().enumerate() {
                    *v = src[src_off + j * step];
                }
            }
        });
        Cow::Owned(col)
    }

    fn col2im(&self, col: &[T], din: Dims, dout: Dims) -> Tensor<T> {
        let ol = dout.len();
        let mut g = Tensor::zeros(self.cin, din);
        let n = din.len();
        self.for_each_run(din, dout, |c, row, dst_off, src_off, len, step| {
            let gc = &mut g.data[c * n..(c + 1) * n];
            let s = &col[row * ol + dst_off..row * ol + dst_off + len];
            for (j, &v) in s.iter().enumerate() {
                let i = src_off + j * step;
                gc[i] = gc[i] + v;
            }
        });
        g
    }

    /// Visit every contiguous x-run of the im2col mapping as
    /// `(channel, col_row, col_offset, input_offset, len, input_step)`.
    fn for_each_run(&self, din: Dims, dout: Dims, mut f: impl FnMut(usize, usize, usize, usize, usize, usize)) {
        let k = self.k;
        let s = self.stride;
        let [tz, ty, tx] = self.taps(din, dout);
        // x runs per tap: (first output, count, first input) split at wrap points
        let mut runs: Vec<Vec<(usize, usize, usize)>> = vec![Vec::new(); k];
        for (kx, r) in runs.iter_mut().enumerate() {
            let t = &tx[kx * dout.x..(kx + 1) * dout.x];
            let mut o = 0;
            while o < dout.x {
                let Some(i0) = t[o] else {
                    o += 1;
                    continue;
                };
                let mut len = 1;
                while o + len < dout.x && t[o + len] == Some(i0 + len * s) {
                    len += 1;
                }
                r.push((o, len, i0));
                o += len;
            }
        }
        for c in 0..self.cin {
            for kz in 0..k {
                for ky in 0..k {
                    for (kx, r) in runs.iter().enumerate() {
                        let row = ((c * k + kz) * k + ky) * k + kx;
                        for oz in 0..dout.z {
                            let Some(iz) = tz[kz * dout.z + oz] else { continue };
                            for oy in 0..dout.y {
                                let Some(iy) = ty[ky * dout.y + oy] else { continue };
                                let obase = (oz * dout.y + oy) * dout.x;
                                let ibase = (iz * din.y + iy) * din.x;
                                for &(o0, len, i0) in r {
                                    f(c, row, obase + o0, ibase + i0, len, s);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.c, self.cin, "{}: input channels", self.weight.name);
        let dout = self.out_dims(x.dims);
        let ol = dout.len();
        let col = self.im2col(x, dout);
        let mut out = Tensor::zeros(self.cout, dout);
        for o in 0..self.cout {
            let b = self.bias.value[o];
            out.channel_mut(o).iter_mut().for_each(|v| *v = b);
        }
        let kdim = self.cin * self.k.pow(3);
        matmul(false, false, self.cout, kdim, ol, &self.weight.value, &col, T::one(), &mut out.data);
        out
    }

    /// Accumulates parameter gradients; returns the input gradient when asked.
    pub fn backward(&mut self, x: &Tensor<T>, grad_out: &Tensor<T>, need_input: bool) -> Option<Tensor<T>> {
        let dout = grad_out.dims;
        let ol = dout.len();
        let kdim = self.cin * self.k.pow(3);
        let col = self.im2col(x, dout);
        matmul(false, true, self.cout, ol, kdim, &grad_out.data, &col, T::one(), &mut self.weight.grad);
        for o in 0..self.cout {
            let s: T = grad_out.channel(o).iter().copied().sum();
            self.bias.grad[o] = self.bias.grad[o] + s;
        }
        if !need_input {
            return None;
        }
        let mut dcol = vec![T::zero(); kdim * ol];
        matmul(true, false, kdim, self.cout, ol, &self.weight.value, &grad_out.data, T::zero(), &mut dcol);
        if self.is_pointwise() {
            return Some(Tensor::from_vec(self.cin, x.dims, dcol));
        }
        Some(self.col2im(&dcol, x.dims, dout))
    }
}

impl<T: Real> HasParams<T> for Conv3d<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.weight);
        f(&self.bias);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

/// A stride-1 3x3x3 convolution followed directly by global average pooling.
///
/// Because nothing sits between the two, the pooled output is
/// `b + W s / N`, where `s[c][k]` sums input channel `c` over the window the
/// kernel tap `k` reads across all output positions. This avoids
/// materializing the full convolution output.
#[derive(Clone, Debug)]
pub struct ConvPool<T> {
    pub cin: usize,
    pub cout: usize,
    pub pad: PadMode,
    pub weight: Param<T>,
    pub bias: Param<T>,
}

/// Input range `[lo, hi)` read along one axis by tap `k` of a 3-tap kernel.
fn tap_range(k: usize, n: usize, pad: PadMode) -> (usize, usize) {
    match pad {
        PadMode::Circular => (0, n),
        PadMode::Zero => match k {
            0 => (0, n.saturating_sub(1)),
            1 => (0, n),
            _ => (1.min(n), n),
        },
    }
}

#[derive(Clone, Debug)]
pub struct ConvPoolCache<T> {
    pub dims: Dims,
    /// `[cin][27]` window sums.
    pub sums: Vec<T>,
}

impl<T: Real> ConvPool<T> {
    pub fn new(name: &str, cin: usize, cout: usize, pad: PadMode) -> Self {
        ConvPool {
            cin,
            cout,
            pad,
            weight: Param::zeros(format!("{name}.weight"), &[cout, cin, 3, 3, 3]),
            bias: Param::zeros(format!("{name}.bias"), &[cout]),
        }
    }

    pub fn init(&mut self, init: Init, seed: u64) {
        init_param(&mut self.weight, init, self.cin * 27, seed);
    }

    fn window_sums(&self, x: &Tensor<T>) -> Vec<T> {
        let d = x.dims;
        let rz: Vec<_> = (0..3).map(|k| tap_range(k, d.z, self.pad)).collect();
        let ry: Vec<_> = (0..3).map(|k| tap_range(k, d.y, self.pad)).collect();
        let rx: Vec<_> = (0..3).map(|k| tap_range(k, d.x, self.pad)).collect();
        let mut sums = vec![T::zero(); self.cin * 27];
        for c in 0..self.cin {
            let xc = x.channel(c);
            // row[z][y][kx], then plane[z][ky][kx]
            let mut plane = vec![[[0.0f64; 3]; 3]; d.z];
            for z in 0..d.z {
                for y in 0..d.y {
                    let row = &xc[(z * d.y + y) * d.x..(z * d.y + y + 1) * d.x];
                    let mut rs = [0.0f64; 3];
                    for (kx, &(lo, hi)) in rx.iter().enumerate() {
                        rs[kx] = row[lo..hi].iter().map(|v| v.f64()).sum();
                    }
                    for (ky, &(lo, hi)) in ry.iter().enumerate() {
                        if y >= lo && y < hi {
                            for kx in 0..3 {
                                plane[z][ky][kx] += rs[kx];
                            }
                        }
                    }
                }
            }
            for (kz, &(lo, hi)) in rz.iter().enumerate() {
                for ky in 0..3 {
                    for kx in 0..3 {
                        let s: f64 = plane[lo..hi].iter().map(|p| p[ky][kx]).sum();
                        sums[c * 27 + (kz * 3 + ky) * 3 + kx] = T::of(s);
                    }
                }
            }
        }
        sums
    }

    pub fn forward(&self, x: &Tensor<T>) -> (Vec<T>, ConvPoolCache<T>) {
        assert_eq!(x.c, self.cin, "{}: input channels", self.weight.name);
        let sums = self.window_sums(x);
        let inv_n = T::of(1.0 / x.spatial() as f64);
        let mut out = self.bias.value.clone();
        let k = self.cin * 27;
        for (o, v) in out.iter_mut().enumerate() {
            let w = &self.weight.value[o * k..(o + 1) * k];
            let dot: T = w.iter().zip(&sums).map(|(&a, &b)| a * b).sum();
            *v = *v + dot * inv_n;
        }
        (out, ConvPoolCache { dims: x.dims, sums })
    }

    pub fn backward(&mut self, cache: &ConvPoolCache<T>, grad_out: &[T], need_input: bool) -> Option<Tensor<T>> {
        let d = cache.dims;
        let inv_n = T::of(1.0 / d.len() as f64);
        let k = self.cin * 27;
        let mut ds = vec![T::zero(); k];
        for (o, &g) in grad_out.iter().enumerate() {
            self.bias.grad[o] = self.bias.grad[o] + g;
            let gs = g * inv_n;
            let w = &self.weight.value[o * k..(o + 1) * k];
            let gw = &mut self.weight.grad[o * k..(o + 1) * k];
            for j in 0..k {
                gw[j] = gw[j] + gs * cache.sums[j];
                ds[j] = ds[j] + gs * w[j];
            }
        }
        if !need_input {
            return None;
        }
        let inside = |n: usize, i: usize| -> [bool; 3] {
            let mut m = [false; 3];
            for (k, v) in m.iter_mut().enumerate() {
                let (lo, hi) = tap_range(k, n, self.pad);
                *v = i >= lo && i < hi;
            }
            m
        };
        let ix: Vec<[bool; 3]> = (0..d.x).map(|i| inside(d.x, i)).collect();
        let mut gx = Tensor::zeros(self.cin, d);
        for c in 0..self.cin {
            let s = &ds[c * 27..(c + 1) * 27];
            let gc = gx.channel_mut(c);
            for z in 0..d.z {
                let iz = inside(d.z, z);
                let mut mz = [[T::zero(); 3]; 3];
                for (kz, _) in iz.iter().enumerate().filter(|(_, &b)| b) {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            mz[ky][kx] = mz[ky][kx] + s[(kz * 3 + ky) * 3 + kx];
                        }
                    }
                }
                for y in 0..d.y {
                    let iy = inside(d.y, y);
                    let mut v = [T::zero(); 3];
                    for (ky, _) in iy.iter().enumerate().filter(|(_, &b)| b) {
                        for kx in 0..3 {
                            v[kx] = v[kx] + mz[ky][kx];
                        }
                    }
                    let row = &mut gc[(z * d.y + y) * d.x..(z * d.y + y + 1) * d.x];
                    for (r, m) in row.iter_mut().zip(&ix) {
                        let mut a = T::zero();
                        for kx in 0..3 {
                            if m[kx] {
                                a = a + v[kx];
                            }
                        }
                        *r = a;
                    }
                }
            }
        }
        Some(gx)
    }
}

impl<T: Real> HasParams<T> for ConvPool<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.weight);
        f(&self.bias);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(c: usize, d: Dims) -> Tensor<f64> {
        let data = (0..c * d.len()).map(|i| ((i * 7919) % 23) as f64 / 11.0 - 1.0).collect();
        Tensor::from_vec(c, d, data)
    }

    fn direct_conv(conv: &Conv3d<f64>, x: &Tensor<f64>) -> Tensor<f64> {
        let dout = conv.out_dims(x.dims);
        let k = conv.k;
        let p = (k / 2) as isize;
        let d = x.dims;
        let mut out = Tensor::zeros(conv.cout, dout);
        for o in 0..conv.cout {
            for oz in 0..dout.z {
                for oy in 0..dout.y {
                    for ox in 0..dout.x {
                        let mut acc = conv.bias.value[o];
                        for c in 0..conv.cin {
                            for kz in 0..k {
                                for ky in 0..k {
                                    for kx in 0..k {
                                        let iz = (oz * conv.stride) as isize + kz as isize - p;
                                        let iy = (oy * conv.stride) as isize + ky as isize - p;
                                        let ix = (ox * conv.stride) as isize + kx as isize - p;
                                        let (iz, iy, ix) = match conv.pad {
                                            PadMode::Zero => {
                                                if iz < 0 || iy < 0 || ix < 0 || iz >= d.z as isize || iy >= d.y as isize || ix >= d.x as isize {
                                                    continue;
                                                }
                                                (iz as usize, iy as usize, ix as usize)
                                            }
                                            PadMode::Circular => (
                                                iz.rem_euclid(d.z as isize) as usize,
                                                iy.rem_euclid(d.y as isize) as usize,
                                                ix.rem_euclid(d.x as isize) as usize,
                                            ),
                                        };
                                        let w = conv.weight.value[(((o * conv.cin + c) * k + kz) * k + ky) * k + kx];
                                        acc += w * x.channel(c)[d.index(iz, iy, ix)];
                                    }
                                }
                            }
                        }
                        out.channel_mut(o)[dout.index(oz, oy, ox)] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_loops() {
        for (k, stride, pad) in [(3, 1, PadMode::Zero), (3, 2, PadMode::Zero), (3, 1, PadMode::Circular), (1, 1, PadMode::Zero)] {
            let mut conv = Conv3d::<f64>::new("c", 2, 3, k, stride, pad);
            conv.init(Init::He, 4);
            conv.bias.value = vec![0.1, -0.2, 0.3];
            let x = ramp(2, Dims::new(4, 6, 5));
            let a = conv.forward(&x);
            let b = direct_conv(&conv, &x);
            assert_eq!(a.dims, b.dims);
            for (u, v) in a.data.iter().zip(&b.data) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn convpool_equals_conv_then_mean() {
        for pad in [PadMode::Zero, PadMode::Circular] {
            let mut cp = ConvPool::<f64>::new("h", 3, 4, pad);
            cp.init(Init::He, 9);
            cp.bias.value = vec![0.5, 0.0, -1.0, 2.0];
            let mut conv = Conv3d::<f64>::new("h", 3, 4, 3, 1, pad);
            conv.weight.value = cp.weight.value.clone();
            conv.bias.value = cp.bias.value.clone();
            let x = ramp(3, Dims::new(3, 5, 4));
            let (pooled, _) = cp.forward(&x);
            let full = conv.forward(&x);
            for o in 0..4 {
                let m = full.channel(o).iter().sum::<f64>() / full.spatial() as f64;
                assert!((m - pooled[o]).abs() < 1e-12);
            }
        }
    }
}
