//! A small CPU autograd-free network toolkit: every layer has a hand-written
//! backward pass. Activations are `[channel][z][y][x]`.

pub mod conv;
pub mod layers;
pub mod real;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::grid::Dims;
use crate::util::{fnv_seed, rng_for};
pub use real::{matmul, Real};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub c: usize,
    pub dims: Dims,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(c: usize, dims: Dims) -> Self {
        Tensor {
            c,
            dims,
            data: vec![T::zero(); c * dims.len()],
        }
    }

    pub fn from_vec(c: usize, dims: Dims, data: Vec<T>) -> Self {
        assert_eq!(data.len(), c * dims.len(), "tensor data length");
        Tensor { c, dims, data }
    }

    pub fn spatial(&self) -> usize {
        self.dims.len()
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let n = self.spatial();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [T] {
        let n = self.spatial();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        assert_eq!((self.c, self.dims), (other.c, other.dims), "tensor shapes");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// A named trainable array with its gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
    /// Whether weight decay applies.
    pub decay: bool,
}

impl<T: Real> Param<T> {
    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Param {
            name: name.into(),
            shape: shape.to_vec(),
            value: vec![T::zero(); n],
            grad: vec![T::zero(); n],
            decay: true,
        }
    }

    pub fn filled(name: impl Into<String>, shape: &[usize], v: T) -> Self {
        let mut p = Param::zeros(name, shape);
        p.value.iter_mut().for_each(|x| *x = v);
        p
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }
}

/// Parameter initializers. Each parameter draws from its own stream, keyed by
/// the model seed and the parameter name, so adding a head does not shift the
/// backbone's initial weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Init {
    /// Normal with std `sqrt(2 / fan_in)`.
    He,
    /// Uniform on `+-1/sqrt(fan_in)`.
    FanInUniform,
}

pub fn init_param<T: Real>(p: &mut Param<T>, init: Init, fan_in: usize, seed: u64) {
    let mut rng = rng_for(seed, fnv_seed(&p.name));
    let fan = fan_in.max(1) as f64;
    match init {
        Init::He => {
            let d = Normal::new(0.0, (2.0 / fan).sqrt()).expect("valid std");
            p.value.iter_mut().for_each(|v| *v = T::of(d.sample(&mut rng)));
        }
        Init::FanInUniform => {
            let b = 1.0 / fan.sqrt();
            let d = Uniform::new_inclusive(-b, b).expect("valid bounds");
            p.value.iter_mut().for_each(|v| *v = T::of(rng.sample(d)));
        }
    }
}

pub trait HasParams<T: Real> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>));

    fn zero_grad(&mut self) {
        self.visit_mut(&mut |p| p.zero_grad());
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |p| n += p.len());
        n
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// Adam with L2 weight decay folded into the gradient.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub cfg: AdamConfig,
    pub t: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, model: &mut dyn HasParams<T>, lr: f64) {
        self.t += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (ob1, ob2) = (T::of(1.0 - c.beta1), T::of(1.0 - c.beta2));
        let step = T::of(lr / bc1);
        let inv_bc2 = T::of(1.0 / bc2);
        let eps = T::of(c.eps);
        let wd = T::of(c.weight_decay);
        let (ms, vs) = (&mut self.m, &mut self.v);
        let mut i = 0;
        model.visit_mut(&mut |p| {
            if ms.len() <= i {
                ms.push(vec![T::zero(); p.len()]);
                vs.push(vec![T::zero(); p.len()]);
            }
            let (m, v) = (&mut ms[i], &mut vs[i]);
            for j in 0..p.value.len() {
                let mut g = p.grad[j];
                if p.decay {
                    g = g + wd * p.value[j];
                }
                m[j] = b1 * m[j] + ob1 * g;
                v[j] = b2 * v[j] + ob2 * g * g;
                p.value[j] = p.value[j] - step * m[j] / ((v[j] * inv_bc2).sqrt() + eps);
            }
            i += 1;
        });
    }
}
