//! Separable trilinear resampling (corner-aligned) and its adjoint.
//!
//! Output index `o` on an axis of length `n_out` samples input coordinate
//! `o * (n_in - 1) / (n_out - 1)`, so the corner voxels map onto each other
//! and resizing to the input shape is the identity.

use num_traits::Float;

use crate::grid::Dims;

#[derive(Clone, Debug)]
pub struct AxisMap {
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
    pub frac: Vec<f64>,
}

pub fn axis_map(n_in: usize, n_out: usize) -> AxisMap {
    let mut lo = Vec::with_capacity(n_out);
    let mut hi = Vec::with_capacity(n_out);
    let mut frac = Vec::with_capacity(n_out);
    for o in 0..n_out {
        let src = if n_out == 1 || n_in == 1 {
            0.0
        } else {
            o as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
        };
        let i0 = (src.floor() as usize).min(n_in - 1);
        let i1 = (i0 + 1).min(n_in - 1);
        let f = if i1 == i0 { 0.0 } else { src - i0 as f64 };
        lo.push(i0);
        hi.push(i1);
        frac.push(f);
    }
    AxisMap { lo, hi, frac }
}

/// Linear resample along one axis of a `[outer][len][inner]` array.
fn pass<T: Float>(src: &[T], outer: usize, n_in: usize, inner: usize, map: &AxisMap, dst: &mut [T]) {
    let n_out = map.lo.len();
    for o in 0..outer {
        let sbase = o * n_in * inner;
        let dbase = o * n_out * inner;
        for (k, ((&i0, &i1), &f)) in map.lo.iter().zip(&map.hi).zip(&map.frac).enumerate() {
            let w1 = T::from(f).unwrap();
            let w0 = T::one() - w1;
            let s0 = &src[sbase + i0 * inner..sbase + (i0 + 1) * inner];
            let s1 = &src[sbase + i1 * inner..sbase + (i1 + 1) * inner];
            let d = &mut dst[dbase + k * inner..dbase + (k + 1) * inner];
            if f == 0.0 {
                d.copy_from_slice(s0);
            } else {
                for ((d, &a), &b) in d.iter_mut().zip(s0).zip(s1) {
                    *d = w0 * a + w1 * b;
                }
            }
        }
    }
}

fn pass_adjoint<T: Float>(
    grad_out: &[T],
    outer: usize,
    n_in: usize,
    inner: usize,
    map: &AxisMap,
    grad_in: &mut [T],
) {
    let n_out = map.lo.len();
    for v in grad_in.iter_mut() {
        *v = T::zero();
    }
    for o in 0..outer {
        let sbase = o * n_in * inner;
        let dbase = o * n_out * inner;
        for (k, ((&i0, &i1), &f)) in map.lo.iter().zip(&map.hi).zip(&map.frac).enumerate() {
            let w1 = T::from(f).unwrap();
            let w0 = T::one() - w1;
            for j in 0..inner {
                let g = grad_out[dbase + k * inner + j];
                grad_in[sbase + i0 * inner + j] = grad_in[sbase + i0 * inner + j] + w0 * g;
                if f != 0.0 {
                    grad_in[sbase + i1 * inner + j] = grad_in[sbase + i1 * inner + j] + w1 * g;
                }
            }
        }
    }
}

/// Trilinear resize of one z-major channel from `din` to `dout`.
pub fn resize<T: Float>(src: &[T], din: Dims, dout: Dims) -> Vec<T> {
    debug_assert_eq!(src.len(), din.len());
    if din == dout {
        return src.to_vec();
    }
    let mx = axis_map(din.x, dout.x);
    let my = axis_map(din.y, dout.y);
    let mz = axis_map(din.z, dout.z);
    let mut a = vec![T::zero(); din.z * din.y * dout.x];
    pass(src, din.z * din.y, din.x, 1, &mx, &mut a);
    let mut b = vec![T::zero(); din.z * dout.y * dout.x];
    pass(&a, din.z, din.y, dout.x, &my, &mut b);
    let mut c = vec![T::zero(); dout.len()];
    pass(&b, 1, din.z, dout.y * dout.x, &mz, &mut c);
    c
}

/// Adjoint of [`resize`]: maps a gradient on the output grid back to the input grid.
pub fn resize_adjoint<T: Float>(grad_out: &[T], din: Dims, dout: Dims) -> Vec<T> {
    debug_assert_eq!(grad_out.len(), dout.len());
    if din == dout {
        return grad_out.to_vec();
    }
    let mx = axis_map(din.x, dout.x);
    let my = axis_map(din.y, dout.y);
    let mz = axis_map(din.z, dout.z);
    let mut b = vec![T::zero(); din.z * dout.y * dout.x];
    pass_adjoint(grad_out, 1, din.z, dout.y * dout.x, &mz, &mut b);
    let mut a = vec![T::zero(); din.z * din.y * dout.x];
    pass_adjoint(&b, din.z, din.y, dout.x, &my, &mut a);
    let mut g = vec![T::zero(); din.len()];
    pass_adjoint(&a, din.z * din.y, din.x, 1, &mx, &mut g);
    g
}

/// Nearest source index per output index under the same corner-aligned map.
pub fn nearest_map(n_in: usize, n_out: usize) -> Vec<usize> {
    (0..n_out)
        .map(|o| {
            if n_out == 1 || n_in == 1 {
                0
            } else {
                let src = o as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
                (src.round() as usize).min(n_in - 1)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adjoint_identity_holds() {
        // <resize(u), v> == <u, resize_adjoint(v)>
        let din = Dims::new(3, 4, 5);
        let dout = Dims::new(5, 2, 7);
        let u: Vec<f64> = (0..din.len()).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let v: Vec<f64> = (0..dout.len()).map(|i| ((i * 13) % 7) as f64 - 3.0).collect();
        let ru = resize(&u, din, dout);
        let av = resize_adjoint(&v, din, dout);
        let lhs: f64 = ru.iter().zip(&v).map(|(a, b)| a * b).sum();
        let rhs: f64 = u.iter().zip(&av).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn matches_direct_trilinear() {
        let din = Dims::new(3, 3, 4);
        let dout = Dims::new(4, 5, 3);
        let u: Vec<f64> = (0..din.len()).map(|i| (i as f64 * 0.37).sin()).collect();
        let out = resize(&u, din, dout);
        let (mz, my, mx) = (axis_map(3, 4), axis_map(3, 5), axis_map(4, 3));
        for z in 0..dout.z {
            for y in 0..dout.y {
                for x in 0..dout.x {
                    let mut acc = 0.0;
                    for (iz, wz) in [(mz.lo[z], 1.0 - mz.frac[z]), (mz.hi[z], mz.frac[z])] {
                        for (iy, wy) in [(my.lo[y], 1.0 - my.frac[y]), (my.hi[y], my.frac[y])] {
                            for (ix, wx) in [(mx.lo[x], 1.0 - mx.frac[x]), (mx.hi[x], mx.frac[x])] {
                                acc += wz * wy * wx * u[din.index(iz, iy, ix)];
                            }
                        }
                    }
                    assert!((acc - out[dout.index(z, y, x)]).abs() < 1e-12);
                }
            }
        }
    }
}
