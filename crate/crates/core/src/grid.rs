//! Dense 3D grids stored z-major (`[z][y][x]`, C order).

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Grid extent in voxels, stored as `(z, y, x)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub z: usize,
    pub y: usize,
    pub x: usize,
}

impl Dims {
    pub const fn new(z: usize, y: usize, x: usize) -> Self {
        Dims { z, y, x }
    }

    /// Build from a `[W, H, Z]` triple as used in configuration files.
    pub const fn from_whz(whz: [usize; 3]) -> Self {
        Dims {
            z: whz[2],
            y: whz[1],
            x: whz[0],
        }
    }

    pub const fn to_whz(self) -> [usize; 3] {
        [self.x, self.y, self.z]
    }

    pub const fn to_zyx(self) -> [usize; 3] {
        [self.z, self.y, self.x]
    }

    pub const fn len(self) -> usize {
        self.z * self.y * self.x
    }

    pub const fn is_empty(self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub const fn index(self, z: usize, y: usize, x: usize) -> usize {
        (z * self.y + y) * self.x + x
    }

    #[inline]
    pub const fn coords(self, idx: usize) -> (usize, usize, usize) {
        let x = idx % self.x;
        let y = (idx / self.x) % self.y;
        let z = idx / (self.x * self.y);
        (z, y, x)
    }

    pub fn min_axis(self) -> usize {
        self.z.min(self.y).min(self.x)
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{} (zyx)", self.z, self.y, self.x)
    }
}

/// Inclusive voxel box `[lo, hi]` per axis, in `(z, y, x)` order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

impl BoundingBox {
    pub fn dims(&self) -> Dims {
        Dims::new(
            self.hi[0] - self.lo[0] + 1,
            self.hi[1] - self.lo[1] + 1,
            self.hi[2] - self.lo[2] + 1,
        )
    }

    pub fn contains(&self, z: usize, y: usize, x: usize) -> bool {
        let p = [z, y, x];
        (0..3).all(|a| p[a] >= self.lo[a] && p[a] <= self.hi[a])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    dims: Dims,
    data: Vec<T>,
}

pub type Volume = Grid<f32>;
pub type Mask = Grid<u8>;

impl<T: Copy> Grid<T> {
    pub fn filled(dims: Dims, value: T) -> Self {
        Grid {
            dims,
            data: vec![value; dims.len()],
        }
    }

    pub fn from_vec(dims: Dims, data: Vec<T>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(invalid(format!(
                "grid data has {} elements but dims {} need {}",
                data.len(),
                dims,
                dims.len()
            )));
        }
        Ok(Grid { dims, data })
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for z in 0..dims.z {
            for y in 0..dims.y {
                for x in 0..dims.x {
                    data.push(f(z, y, x));
                }
            }
        }
        Grid { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, z: usize, y: usize, x: usize) -> T {
        self.data[self.dims.index(z, y, x)]
    }

    #[inline]
    pub fn set(&mut self, z: usize, y: usize, x: usize, v: T) {
        let i = self.dims.index(z, y, x);
        self.data[i] = v;
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Grid<U> {
        Grid {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Copy out the sub-grid covered by `bbox`.
    pub fn crop(&self, bbox: &BoundingBox) -> Grid<T> {
        let out = bbox.dims();
        Grid::from_fn(out, |z, y, x| {
            self.get(z + bbox.lo[0], y + bbox.lo[1], x + bbox.lo[2])
        })
    }
}

impl Mask {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v <= 1)
    }

    /// Tight bounding box of the nonzero voxels, `None` when empty.
    pub fn bounding_box(&self) -> Option<BoundingBox> {
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        let mut any = false;
        for (i, &v) in self.data.iter().enumerate() {
            if v == 0 {
                continue;
            }
            any = true;
            let (z, y, x) = self.dims.coords(i);
            for (a, c) in [z, y, x].into_iter().enumerate() {
                lo[a] = lo[a].min(c);
                hi[a] = hi[a].max(c);
            }
        }
        any.then_some(BoundingBox { lo, hi })
    }

    /// Inclusive z-range of the nonzero voxels.
    pub fn z_extent(&self) -> Option<(usize, usize)> {
        self.bounding_box().map(|b| (b.lo[0], b.hi[0]))
    }
}

impl Volume {
    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len().max(1) as f64
    }

    pub fn min_value(&self) -> f32 {
        self.data.iter().copied().fold(f32::INFINITY, f32::min)
    }
}
