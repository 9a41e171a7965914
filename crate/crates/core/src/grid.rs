//! Uniform tensor-product spatial grids and time grids.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Uniform grid on a box. Node indices are row-major with the last dimension
/// varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGrid {
    min: Vec<f64>,
    max: Vec<f64>,
    count: Vec<usize>,
    spacing: Vec<f64>,
    strides: Vec<usize>,
}

impl SpatialGrid {
    pub fn new(min: Vec<f64>, max: Vec<f64>, count: Vec<usize>) -> Result<Self> {
        let d = min.len();
        if d == 0 || max.len() != d || count.len() != d {
            return Err(Error::DegenerateGrid(
                "min, max and count must share a non-zero length".into(),
            ));
        }
        for i in 0..d {
            if !(min[i].is_finite() && max[i].is_finite() && min[i] < max[i]) {
                return Err(Error::DegenerateGrid(format!("axis {}: need min < max", i + 1)));
            }
            if count[i] < 3 {
                return Err(Error::DegenerateGrid(format!("axis {}: need at least 3 points", i + 1)));
            }
        }
        let spacing: Vec<f64> = (0..d).map(|i| (max[i] - min[i]) / (count[i] - 1) as f64).collect();
        if spacing.iter().any(|h| !(*h > 0.0)) {
            return Err(Error::DegenerateGrid("non-positive spacing".into()));
        }
        let mut strides = vec![1usize; d];
        for i in (0..d.saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * count[i + 1];
        }
        Ok(SpatialGrid {
            min,
            max,
            count,
            spacing,
            strides,
        })
    }

    /// Same box in every dimension, with spacing `dx` (which must divide the width).
    pub fn cube(d: usize, min: f64, max: f64, dx: f64) -> Result<Self> {
        if !(dx > 0.0) {
            return Err(Error::DegenerateGrid(format!("spacing must be positive, got {dx}")));
        }
        let cells = (max - min) / dx;
        let n = libm::round(cells);
        if libm::fabs(cells - n) > 1e-9 * n.max(1.0) {
            return Err(Error::DegenerateGrid(format!(
                "spacing {dx} does not divide [{min}, {max}]"
            )));
        }
        SpatialGrid::new(vec![min; d], vec![max; d], vec![n as usize + 1; d])
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    pub fn min(&self) -> &[f64] {
        &self.min
    }

    pub fn max(&self) -> &[f64] {
        &self.max
    }

    pub fn count(&self) -> &[usize] {
        &self.count
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn len(&self) -> usize {
        self.count.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.strides[axis]
    }

    /// Per-axis index of `node`.
    pub fn axis_index(&self, node: usize, axis: usize) -> usize {
        (node / self.strides[axis]) % self.count[axis]
    }

    pub fn coord(&self, node: usize, axis: usize) -> f64 {
        let i = self.axis_index(node, axis);
        if i + 1 == self.count[axis] {
            self.max[axis]
        } else {
            self.min[axis] + self.spacing[axis] * i as f64
        }
    }

    pub fn coords_into(&self, node: usize, out: &mut [f64]) {
        for (axis, o) in out.iter_mut().enumerate() {
            *o = self.coord(node, axis);
        }
    }

    pub fn coords(&self, node: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.coords_into(node, &mut out);
        out
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        const SLACK: f64 = 1e-12;
        x.len() == self.dim()
            && x.iter().enumerate().all(|(i, &c)| {
                let w = (self.max[i] - self.min[i]) * SLACK;
                c >= self.min[i] - w && c <= self.max[i] + w
            })
    }

    /// Nearest node, clamping coordinates to the box. Half-way ties go to the
    /// lower index.
    pub fn nearest_node(&self, x: &[f64]) -> usize {
        let mut node = 0;
        for (axis, &c) in x.iter().enumerate().take(self.dim()) {
            let r = (c - self.min[axis]) / self.spacing[axis];
            let mut i = libm::ceil(r - 0.5);
            i = i.clamp(0.0, (self.count[axis] - 1) as f64);
            node += i as usize * self.strides[axis];
        }
        node
    }

    /// Multilinear interpolation of nodal `values` at `x` (which must be inside the box).
    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> f64 {
        let d = self.dim();
        let mut base = 0usize;
        let mut frac = [0.0f64; 8];
        let mut frac_vec;
        let frac: &mut [f64] = if d <= 8 {
            &mut frac[..d]
        } else {
            frac_vec = vec![0.0; d];
            &mut frac_vec
        };
        for axis in 0..d {
            let r = ((x[axis] - self.min[axis]) / self.spacing[axis]).clamp(0.0, (self.count[axis] - 1) as f64);
            let mut i = libm::floor(r) as usize;
            if i + 1 >= self.count[axis] {
                i = self.count[axis] - 2;
            }
            frac[axis] = r - i as f64;
            base += i * self.strides[axis];
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut node = base;
            for (axis, f) in frac.iter().enumerate() {
                if corner >> axis & 1 == 1 {
                    w *= f;
                    node += self.strides[axis];
                } else {
                    w *= 1.0 - f;
                }
            }
            if w != 0.0 {
                acc += w * values[node];
            }
        }
        acc
    }
}

/// Partition `s = t_0 < t_1 < ... < t_n = T`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::InvalidArgument("a time grid needs at least two points".into()));
        }
        if times.iter().any(|t| !t.is_finite()) || times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument("time grid must be strictly increasing".into()));
        }
        Ok(TimeGrid { times })
    }

    /// `n` equal intervals on `[s, end]`; endpoints are exact.
    pub fn uniform(s: f64, end: f64, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("a time grid needs at least one interval".into()));
        }
        let times = (0..=n)
            .map(|k| {
                if k == n {
                    end
                } else {
                    s + (end - s) * k as f64 / n as f64
                }
            })
            .collect();
        TimeGrid::new(times)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn intervals(&self) -> usize {
        self.times.len() - 1
    }

    pub fn mesh(&self) -> f64 {
        self.times.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    /// 1-based interval `k` with `t_{k-1} < t <= t_k`.
    pub fn interval_of(&self, t: f64) -> Result<usize> {
        if !(t > self.start() && t <= self.end()) {
            return Err(Error::InvalidArgument(format!(
                "time {t} is outside ({}, {}]",
                self.start(),
                self.end()
            )));
        }
        // first index with times[k] >= t
        let k = self.times.partition_point(|&x| x < t);
        Ok(k)
    }
}
