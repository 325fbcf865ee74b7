//! Monotone finite-difference stencils for frozen linear generators
//! `½ tr[a D²u] + ⟨β, ∇u⟩ + c` on grids of dimension 1 or 2.
//!
//! A stencil is stored in difference form `Σ_s w_s (u_s − u_0) + c` with all
//! `w_s ≥ 0`, which is exactly the monotonicity condition. Second
//! derivatives use central differences, mixed derivatives the sign-dependent
//! seven-point stencil (monotone when `a_kk/h_k ≥ |a_kl|/h_l`), and drift
//! terms are upwinded.
//!
//! Boundary rows: along an axis where the node sits on the boundary the
//! normal second difference is taken as zero (linear ghost extrapolation),
//! mixed terms are dropped, and an upwind difference that would need a node
//! outside the grid is dropped (constant ghost extrapolation). Both choices
//! keep every weight nonnegative.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::GridSpec;

/// Slots for `{-1,0,1}^dim` neighbor offsets; dimension at most 2.
pub(crate) const SLOTS: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Stencil {
    pub w: [f64; SLOTS],
    pub cost: f64,
}

impl Stencil {
    pub fn rate(&self) -> f64 {
        self.w.iter().sum()
    }
}

/// Per-grid neighbor bookkeeping shared by all stencils on that grid.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    dim: usize,
    spacing: Vec<f64>,
    nx: Vec<usize>,
    /// Linear index offset for each slot (center slot unused).
    pub offsets: [isize; SLOTS],
    /// Slots carrying any weight for this dimension.
    pub active: Vec<usize>,
}

impl Layout {
    pub fn new(grid: &GridSpec) -> Result<Self> {
        let dim = grid.dim();
        if !(1..=2).contains(&dim) {
            return Err(Error::Unsupported(format!(
                "finite-difference grids of dimension {dim} (only 1 and 2)"
            )));
        }
        let mut offsets = [0isize; SLOTS];
        let mut active = Vec::new();
        let count = 3usize.pow(dim as u32);
        for (slot, off) in offsets.iter_mut().enumerate().take(count) {
            let d = slot_to_offset(slot, dim);
            if d.iter().all(|&x| x == 0) {
                continue;
            }
            *off = d
                .iter()
                .enumerate()
                .map(|(k, &dk)| dk * grid.stride(k) as isize)
                .sum();
            active.push(slot);
        }
        Ok(Self {
            dim,
            spacing: grid.spacings(),
            nx: grid.nx.clone(),
            offsets,
            active,
        })
    }

    fn slot(&self, d: &[isize]) -> usize {
        d.iter().fold(0, |acc, &dk| acc * 3 + (dk + 1) as usize)
    }

    fn unit(&self, axis: usize, sign: isize) -> usize {
        let mut d = [0isize; 2];
        d[axis] = sign;
        self.slot(&d[..self.dim])
    }

    /// Builds the stencil of `½ tr[a D²u] + ⟨drift, ∇u⟩ + cost` at a node.
    pub fn build(
        &self,
        index: &[usize],
        a: &DMatrix<f64>,
        drift: &[f64],
        cost: f64,
    ) -> Result<Stencil> {
        let mut w = [0.0; SLOTS];
        let h = &self.spacing;
        let interior: Vec<bool> = (0..self.dim)
            .map(|k| index[k] > 0 && index[k] + 1 < self.nx[k])
            .collect();
        for k in 0..self.dim {
            if !interior[k] {
                continue;
            }
            let mut axis_w = 0.5 * a[(k, k)] / (h[k] * h[k]);
            let scale = axis_w.abs();
            for l in 0..self.dim {
                if l == k || !interior[l] {
                    continue;
                }
                let akl = 0.5 * (a[(k, l)] + a[(l, k)]);
                axis_w -= 0.5 * akl.abs() / (h[k] * h[l]);
            }
            if axis_w < -1e-12 * scale.max(1e-300) {
                return Err(Error::MonotonicityUnavailable(format!(
                    "diffusion matrix {a} is not diagonally dominant relative to the grid spacing at node {index:?}"
                )));
            }
            let axis_w = axis_w.max(0.0);
            w[self.unit(k, 1)] += axis_w;
            w[self.unit(k, -1)] += axis_w;
        }
        if self.dim == 2 && interior[0] && interior[1] {
            let akl = 0.5 * (a[(0, 1)] + a[(1, 0)]);
            let cw = 0.5 * akl.abs() / (h[0] * h[1]);
            if akl > 0.0 {
                w[self.slot(&[1, 1])] += cw;
                w[self.slot(&[-1, -1])] += cw;
            } else if akl < 0.0 {
                w[self.slot(&[1, -1])] += cw;
                w[self.slot(&[-1, 1])] += cw;
            }
        }
        for k in 0..self.dim {
            let beta = drift[k];
            if beta > 0.0 && index[k] + 1 < self.nx[k] {
                w[self.unit(k, 1)] += beta / h[k];
            } else if beta < 0.0 && index[k] > 0 {
                w[self.unit(k, -1)] -= beta / h[k];
            }
        }
        Ok(Stencil { w, cost })
    }

    /// `Σ_s w_s (u[i+off_s] − u[i]) + cost`.
    #[inline]
    pub fn apply(&self, s: &Stencil, u: &[f64], i: usize) -> f64 {
        let center = u[i];
        let mut acc = s.cost;
        for &slot in &self.active {
            let wt = s.w[slot];
            if wt != 0.0 {
                acc += wt * (u[(i as isize + self.offsets[slot]) as usize] - center);
            }
        }
        acc
    }
}

fn slot_to_offset(mut slot: usize, dim: usize) -> Vec<isize> {
    let mut d = vec![0isize; dim];
    for k in (0..dim).rev() {
        d[k] = (slot % 3) as isize - 1;
        slot /= 3;
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid2() -> GridSpec {
        GridSpec::new(vec![-1.0, -1.0], vec![1.0, 1.0], vec![11, 11], 1).unwrap()
    }

    #[test]
    fn exact_on_quadratics_in_the_interior() {
        let g = grid2();
        let lay = Layout::new(&g).unwrap();
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.7, 0.7, 1.0]);
        let beta = [0.3, -0.4];
        let u: Vec<f64> = g
            .nodes()
            .iter()
            .map(|x| x[0] * x[0] + 3.0 * x[0] * x[1] - x[1] * x[1])
            .collect();
        let i = 5 * 11 + 5;
        let s = lay.build(&g.multi_index(i), &a, &[0.0, 0.0], 0.0).unwrap();
        // ½ tr[a D²u] with D²u = [[2,3],[3,-2]]
        let exact = 0.5 * (2.0 * 2.0 + 2.0 * 0.7 * 3.0 + 1.0 * -2.0);
        assert!((lay.apply(&s, &u, i) - exact).abs() < 1e-10);
        let s = lay.build(&g.multi_index(i), &DMatrix::zeros(2, 2), &beta, 0.0).unwrap();
        // upwind differences at the origin: one-sided slopes of the quadratic
        let h = g.spacing(0);
        let expected = 0.3 * (h * h) / h + -0.4 * -(-(h * h)) / h;
        assert!((lay.apply(&s, &u, i) - expected).abs() < 1e-10);
    }

    #[test]
    fn weights_are_nonnegative_and_boundaries_are_handled() {
        let g = grid2();
        let lay = Layout::new(&g).unwrap();
        let a = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        for i in 0..g.node_count() {
            let s = lay.build(&g.multi_index(i), &a, &[1.0, -2.0], 0.5).unwrap();
            assert!(s.w.iter().all(|&w| w >= 0.0));
            for &slot in &lay.active {
                if s.w[slot] > 0.0 {
                    let j = i as isize + lay.offsets[slot];
                    assert!(j >= 0 && (j as usize) < g.node_count());
                }
            }
        }
    }

    #[test]
    fn non_dominant_cross_terms_are_rejected() {
        let g = grid2();
        let lay = Layout::new(&g).unwrap();
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.9, 0.9, 0.5]);
        let err = lay.build(&g.multi_index(60), &a, &[0.0, 0.0], 0.0);
        assert!(matches!(err, Err(Error::MonotonicityUnavailable(_))));
    }
}
