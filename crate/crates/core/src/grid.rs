//! Uniform tensor grids, value fields over space-time grids, and multilinear
//! interpolation.

use serde::Serialize;

use crate::error::{Error, Result};

/// Uniform grid on the box `x_lo..x_hi` with `nx[k]` nodes along axis `k`
/// and `nt` time steps. Nodes are numbered row-major: the last axis varies
/// fastest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSpec {
    pub x_lo: Vec<f64>,
    pub x_hi: Vec<f64>,
    pub nx: Vec<usize>,
    pub nt: usize,
}

impl GridSpec {
    pub fn new(x_lo: Vec<f64>, x_hi: Vec<f64>, nx: Vec<usize>, nt: usize) -> Result<Self> {
        if x_lo.is_empty() || x_lo.len() != x_hi.len() || x_lo.len() != nx.len() {
            return Err(Error::Config("grid x_lo, x_hi and nx must be nonempty and of equal length".into()));
        }
        for k in 0..x_lo.len() {
            if !(x_lo[k].is_finite() && x_hi[k].is_finite() && x_lo[k] < x_hi[k]) {
                return Err(Error::Config(format!("grid axis {k}: need x_lo < x_hi")));
            }
            if nx[k] < 3 {
                return Err(Error::Config(format!("grid axis {k}: need at least 3 nodes, got {}", nx[k])));
            }
        }
        if nt == 0 {
            return Err(Error::Config("grid nt must be at least 1".into()));
        }
        Ok(Self { x_lo, x_hi, nx, nt })
    }

    /// One-dimensional grid on `[lo, hi]` with spacing as close to `h` as
    /// the node count allows.
    pub fn uniform_1d(lo: f64, hi: f64, h: f64, nt: usize) -> Result<Self> {
        let cells = ((hi - lo) / h).round().max(2.0) as usize;
        Self::new(vec![lo], vec![hi], vec![cells + 1], nt)
    }

    pub fn dim(&self) -> usize {
        self.nx.len()
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.x_hi[axis] - self.x_lo[axis]) / (self.nx[axis] - 1) as f64
    }

    pub fn spacings(&self) -> Vec<f64> {
        (0..self.dim()).map(|k| self.spacing(k)).collect()
    }

    pub fn node_count(&self) -> usize {
        self.nx.iter().product()
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.nx[axis + 1..].iter().product()
    }

    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        if i + 1 == self.nx[axis] {
            self.x_hi[axis]
        } else {
            self.x_lo[axis] + i as f64 * self.spacing(axis)
        }
    }

    pub fn multi_index(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        for k in (0..self.dim()).rev() {
            out[k] = idx % self.nx[k];
            idx /= self.nx[k];
        }
        out
    }

    pub fn node(&self, idx: usize) -> Vec<f64> {
        self.multi_index(idx)
            .iter()
            .enumerate()
            .map(|(k, &i)| self.coord(k, i))
            .collect()
    }

    pub fn nodes(&self) -> Vec<Vec<f64>> {
        (0..self.node_count()).map(|i| self.node(i)).collect()
    }

    /// True if every coordinate lies in the middle half of its axis.
    pub fn is_central(&self, idx: usize) -> bool {
        self.multi_index(idx)
            .iter()
            .enumerate()
            .all(|(k, &i)| self.is_central_coord(k, self.coord(k, i)))
    }

    pub fn is_central_coord(&self, axis: usize, x: f64) -> bool {
        let w = self.x_hi[axis] - self.x_lo[axis];
        let slack = 1e-9 * self.spacing(axis);
        x >= self.x_lo[axis] + 0.25 * w - slack && x <= self.x_hi[axis] - 0.25 * w + slack
    }

    pub fn central_nodes(&self) -> Vec<usize> {
        (0..self.node_count()).filter(|&i| self.is_central(i)).collect()
    }

    /// `(lo, hi)` of the central reporting region per axis.
    pub fn central_box(&self) -> (Vec<f64>, Vec<f64>) {
        (0..self.dim())
            .map(|k| {
                let w = self.x_hi[k] - self.x_lo[k];
                (self.x_lo[k] + 0.25 * w, self.x_hi[k] - 0.25 * w)
            })
            .unzip()
    }

    /// Halves every spacing and the time step.
    pub fn refined(&self) -> Self {
        Self {
            x_lo: self.x_lo.clone(),
            x_hi: self.x_hi.clone(),
            nx: self.nx.iter().map(|&n| 2 * (n - 1) + 1).collect(),
            nt: 2 * self.nt,
        }
    }

    pub fn with_nt(&self, nt: usize) -> Self {
        Self { nt, ..self.clone() }
    }

    /// How many cells `x` lies outside the box, maximized over axes (0 inside).
    pub fn cells_outside(&self, x: &[f64]) -> f64 {
        (0..self.dim())
            .map(|k| {
                let h = self.spacing(k);
                let below = (self.x_lo[k] - x[k]) / h;
                let above = (x[k] - self.x_hi[k]) / h;
                below.max(above).max(0.0)
            })
            .fold(0.0, f64::max)
    }

    /// Multilinear interpolation of nodal `values` at `x`; coordinates outside
    /// the box are clamped to it.
    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> f64 {
        self.interpolate_with(x, |i| values[i])
    }

    /// As [`GridSpec::interpolate`], reading node values through `value`.
    pub fn interpolate_with(&self, x: &[f64], value: impl Fn(usize) -> f64) -> f64 {
        let dim = self.dim();
        if dim == 1 {
            let (i, w) = self.locate(0, x[0]);
            return value(i) * (1.0 - w) + value(i + 1) * w;
        }
        let mut base = 0;
        let mut cells = [(0usize, 0.0f64); 8];
        for k in 0..dim {
            let (i, w) = self.locate(k, x[k]);
            base += i * self.stride(k);
            cells[k] = (self.stride(k), w);
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << dim) {
            let mut weight = 1.0;
            let mut idx = base;
            for (k, &(stride, w)) in cells.iter().enumerate().take(dim) {
                if corner >> k & 1 == 1 {
                    weight *= w;
                    idx += stride;
                } else {
                    weight *= 1.0 - w;
                }
            }
            if weight != 0.0 {
                acc += weight * value(idx);
            }
        }
        acc
    }

    /// Cell index and fractional offset of `x` along `axis`, after clamping.
    fn locate(&self, axis: usize, x: f64) -> (usize, f64) {
        let h = self.spacing(axis);
        let cells = self.nx[axis] - 1;
        let s = ((x - self.x_lo[axis]) / h).clamp(0.0, cells as f64);
        let i = (s.floor() as usize).min(cells - 1);
        (i, s - i as f64)
    }
}

/// Values on every node of a grid at a sequence of time levels.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueField {
    pub grid: GridSpec,
    pub times: Vec<f64>,
    pub layers: Vec<Vec<f64>>,
}

impl ValueField {
    pub fn layer(&self, k: usize) -> &[f64] {
        &self.layers[k]
    }

    pub fn first(&self) -> &[f64] {
        &self.layers[0]
    }

    pub fn last(&self) -> &[f64] {
        self.layers.last().expect("value field has layers")
    }

    /// Index of the stored time closest to `t`.
    pub fn layer_index(&self, t: f64) -> usize {
        let mut best = 0;
        for (k, &s) in self.times.iter().enumerate() {
            if (s - t).abs() < (self.times[best] - t).abs() {
                best = k;
            }
        }
        best
    }

    pub fn at_layer(&self, k: usize, x: &[f64]) -> f64 {
        self.grid.interpolate(&self.layers[k], x)
    }

    /// Interpolated value at `(t, x)`, linear in time between stored layers.
    pub fn value(&self, t: f64, x: &[f64]) -> f64 {
        let n = self.times.len();
        if n == 1 {
            return self.at_layer(0, x);
        }
        let ascending = self.times[n - 1] > self.times[0];
        let pos = |s: f64| if ascending { s } else { -s };
        let tt = pos(t);
        let mut k = 0;
        while k + 2 < n && pos(self.times[k + 1]) <= tt {
            k += 1;
        }
        let (t0, t1) = (pos(self.times[k]), pos(self.times[k + 1]));
        let w = ((tt - t0) / (t1 - t0)).clamp(0.0, 1.0);
        (1.0 - w) * self.at_layer(k, x) + w * self.at_layer(k + 1, x)
    }

    /// Smallest `C` with `|V(t,x)| ≤ C(1+|x|²)` over all stored nodes.
    pub fn growth_constant(&self) -> f64 {
        let nodes = self.grid.nodes();
        self.layers
            .iter()
            .flat_map(|layer| {
                layer.iter().zip(&nodes).map(|(v, x)| {
                    let r2: f64 = x.iter().map(|c| c * c).sum();
                    v.abs() / (1.0 + r2)
                })
            })
            .fold(0.0, f64::max)
    }

    /// Sup-norm of `values − reference(x)` over central nodes of layer `k`.
    pub fn central_error(&self, k: usize, reference: impl Fn(&[f64]) -> f64) -> f64 {
        self.grid
            .central_nodes()
            .into_iter()
            .map(|i| (self.layers[k][i] - reference(&self.grid.node(i))).abs())
            .fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().flatten().all(|v| v.is_finite())
    }
}
