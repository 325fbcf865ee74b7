//! Sublinear expectations through the G-heat equation
//! `∂_t u − G(D²u) = 0`, `u(0, ·) = φ`, so that `Ê[φ(x + B_t)] = u(t, x)`.
//!
//! The solver steps forward explicitly: `u ← u + dt · max_γ ½ tr[γ D²_h u]`
//! with the monotone stencils from [`crate::stencil`]. Degenerate vertices
//! contribute zero diffusion and need no special treatment.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::ambiguity::AmbiguitySet;
use crate::error::{Error, Result};
use crate::grid::{GridSpec, ValueField};
use crate::problem::expr::{Expr, Vars};
use crate::stencil::{Layout, Stencil};

/// Upper bound on the total number of explicit substeps of one solve.
pub const MAX_SUBSTEPS: u64 = 10_000_000;

/// The finite family of diffusion matrices whose pointwise maximum forms the
/// nonlinear operator, on a particular grid.
struct HeatOperator {
    layout: Layout,
    /// `stencils[node * branches + branch]`
    stencils: Vec<Stencil>,
    branches: usize,
    lambda_max: f64,
}

impl HeatOperator {
    fn new(diffusions: &[DMatrix<f64>], grid: &GridSpec) -> Result<Self> {
        let layout = Layout::new(grid)?;
        let zero = vec![0.0; grid.dim()];
        let branches = diffusions.len();
        let mut stencils = Vec::with_capacity(grid.node_count() * branches);
        for i in 0..grid.node_count() {
            let idx = grid.multi_index(i);
            for a in diffusions {
                stencils.push(layout.build(&idx, a, &zero, 0.0)?);
            }
        }
        let lambda_max = diffusions
            .iter()
            .map(crate::linalg::spectral_norm)
            .fold(0.0, f64::max);
        Ok(Self {
            layout,
            stencils,
            branches,
            lambda_max,
        })
    }

    /// Largest stable step: `min_k h_k² / (2 · dim · Λ_max)`.
    fn cfl_step(&self, grid: &GridSpec) -> f64 {
        if self.lambda_max == 0.0 {
            return f64::INFINITY;
        }
        let hmin = grid.spacings().into_iter().fold(f64::INFINITY, f64::min);
        hmin * hmin / (2.0 * grid.dim() as f64 * self.lambda_max)
    }

    fn rate(&self, u: &[f64], i: usize) -> f64 {
        let base = i * self.branches;
        let mut best = f64::NEG_INFINITY;
        for s in &self.stencils[base..base + self.branches] {
            best = best.max(self.layout.apply(s, u, i));
        }
        best
    }

    /// Advances `u` through `nt` layers of length `horizon / nt`, calling
    /// `on_layer(k, u)` after each.
    fn evolve(
        &self,
        grid: &GridSpec,
        u: &mut Vec<f64>,
        horizon: f64,
        nt: usize,
        mut on_layer: impl FnMut(usize, &[f64]),
    ) -> Result<()> {
        let layer_dt = horizon / nt as f64;
        let substeps = (layer_dt / self.cfl_step(grid)).ceil().max(1.0);
        let total = substeps * nt as f64;
        if total > MAX_SUBSTEPS as f64 {
            return Err(Error::CflOverflow {
                required: total as u64,
                limit: MAX_SUBSTEPS,
            });
        }
        let substeps = substeps as usize;
        let dt = layer_dt / substeps as f64;
        let mut next = vec![0.0; u.len()];
        let parallel = u.len() >= 4096;
        for k in 1..=nt {
            if self.lambda_max > 0.0 {
                for _ in 0..substeps {
                    let cur: &[f64] = u;
                    let step = |(i, out): (usize, &mut f64)| *out = cur[i] + dt * self.rate(cur, i);
                    if parallel {
                        next.par_iter_mut().enumerate().for_each(step);
                    } else {
                        next.iter_mut().enumerate().for_each(step);
                    }
                    std::mem::swap(u, &mut next);
                }
            }
            if let Some(bad) = u.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    step: k,
                    context: Some(format!("G-heat node {bad}")),
                });
            }
            on_layer(k, u);
        }
        Ok(())
    }
}

fn diffusions_for(s: &AmbiguitySet, grid: &GridSpec) -> Result<Vec<DMatrix<f64>>> {
    if s.dim() > 2 {
        return Err(Error::Unsupported(format!(
            "G-heat grids for {} Brownian components; use a directional payoff",
            s.dim()
        )));
    }
    if grid.dim() != s.dim() {
        return Err(Error::DimensionMismatch {
            what: "G-heat grid vs Brownian dimension".into(),
            expected: s.dim(),
            got: grid.dim(),
        });
    }
    Ok(s.vertices().to_vec())
}

fn sample_payoff(phi: &Expr, grid: &GridSpec) -> Result<Vec<f64>> {
    grid.nodes()
        .iter()
        .map(|x| phi.eval(0.0, x, &[]).map_err(|e| Error::coefficient("payoff", e)))
        .collect()
}

fn solve_field(
    diffusions: &[DMatrix<f64>],
    initial: Vec<f64>,
    horizon: f64,
    grid: &GridSpec,
) -> Result<ValueField> {
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::Config(format!("G-heat horizon must be nonnegative, got {horizon}")));
    }
    let op = HeatOperator::new(diffusions, grid)?;
    let mut layers = Vec::with_capacity(grid.nt + 1);
    layers.push(initial.clone());
    let mut u = initial;
    op.evolve(grid, &mut u, horizon, grid.nt, |_, layer| layers.push(layer.to_vec()))?;
    let times = (0..=grid.nt)
        .map(|k| horizon * k as f64 / grid.nt as f64)
        .collect();
    Ok(ValueField {
        grid: grid.clone(),
        times,
        layers,
    })
}

/// Solves the G-heat equation on `[0, horizon]` for `Ê[φ(x + B_t)]`.
///
/// The grid dimension must equal the Brownian dimension (1 or 2). Layers are
/// stored at `t_k = k · horizon / nt`.
pub fn solve_gheat(
    s: &AmbiguitySet,
    phi: &Expr,
    horizon: f64,
    grid: &GridSpec,
) -> Result<ValueField> {
    let diffusions = diffusions_for(s, grid)?;
    solve_field(&diffusions, sample_payoff(phi, grid)?, horizon, grid)
}

/// Solves the one-dimensional G-heat equation of the scalar process
/// `⟨β, B⟩`, whose generator is `a ↦ G(a ββᵀ)`.
pub fn solve_gheat_directional(
    s: &AmbiguitySet,
    beta: &[f64],
    phi: &Expr,
    horizon: f64,
    grid: &GridSpec,
) -> Result<ValueField> {
    if grid.dim() != 1 {
        return Err(Error::DimensionMismatch {
            what: "directional G-heat grid".into(),
            expected: 1,
            got: grid.dim(),
        });
    }
    if beta.len() != s.dim() {
        return Err(Error::DimensionMismatch {
            what: "direction".into(),
            expected: s.dim(),
            got: beta.len(),
        });
    }
    let (hi, lo) = s.directional_bounds(beta);
    let diffusions = vec![DMatrix::from_element(1, 1, lo), DMatrix::from_element(1, 1, hi)];
    solve_field(&diffusions, sample_payoff(phi, grid)?, horizon, grid)
}

/// `Ê[φ(B_t)]`: the G-heat solution at time `t`, interpolated at the origin.
pub fn g_expectation(s: &AmbiguitySet, phi: &Expr, t: f64, grid: &GridSpec) -> Result<f64> {
    let field = solve_gheat(s, phi, t, grid)?;
    let origin = vec![0.0; grid.dim()];
    Ok(field.at_layer(grid.nt, &origin))
}

/// Result of [`nested_expectation`].
#[derive(Debug, Clone, Serialize)]
pub struct NestedExpectation {
    pub value: f64,
    pub warnings: Vec<String>,
}

/// Maximum number of increments supported by [`nested_expectation`].
pub const MAX_NESTED_INCREMENTS: usize = 3;

/// Adjacent tabulated values further apart than `10 × NESTED_TOLERANCE` in
/// the central region trigger an under-resolution warning.
pub const NESTED_TOLERANCE: f64 = 1e-2;

/// `Ê[φ(B_{t1}, B_{t2} − B_{t1}, …)]` for a one-dimensional G-Brownian
/// motion, by backward recursion over the increments.
///
/// `phi` is written in `y1..yN` (scope [`crate::problem::expr::Scope::increments`]),
/// `y_k` standing for the k-th increment. Each level solves one G-heat
/// equation per grid-tabulated value of the earlier increments.
pub fn nested_expectation(
    s: &AmbiguitySet,
    phi: &Expr,
    times: &[f64],
    grid: &GridSpec,
) -> Result<NestedExpectation> {
    let n = times.len();
    if n == 0 || n > MAX_NESTED_INCREMENTS {
        return Err(Error::Unsupported(format!(
            "nested expectations over {n} increments (supported: 1..={MAX_NESTED_INCREMENTS})"
        )));
    }
    if s.dim() != 1 || grid.dim() != 1 {
        return Err(Error::Unsupported(
            "nested expectations need a one-dimensional ambiguity set and grid".into(),
        ));
    }
    let mut prev = 0.0;
    let mut increments = Vec::with_capacity(n);
    for &t in times {
        if !(t > prev) {
            return Err(Error::Config("nested expectation times must be positive and increasing".into()));
        }
        increments.push(t - prev);
        prev = t;
    }
    let op = HeatOperator::new(s.vertices(), grid)?;
    let coords: Vec<f64> = (0..grid.nx[0]).map(|i| grid.coord(0, i)).collect();
    let nodes = coords.len();
    let origin = [0.0];

    // Tabulate φ on grid^N, last increment fastest.
    let total = nodes.pow(n as u32);
    let mut table = Vec::with_capacity(total);
    let mut y = vec![0.0; n];
    for flat in 0..total {
        let mut r = flat;
        for k in (0..n).rev() {
            y[k] = coords[r % nodes];
            r /= nodes;
        }
        let v = phi
            .eval_vars(&Vars {
                t: 0.0,
                x: &[],
                v: &[],
                y: &y,
            })
            .map_err(|e| Error::coefficient("payoff", e))?;
        table.push(v);
    }

    let mut warnings = Vec::new();
    for level in (0..n).rev() {
        let horizon = increments[level];
        let reduced: Vec<f64> = table
            .par_chunks(nodes)
            .map(|slice| {
                let mut u = slice.to_vec();
                op.evolve(grid, &mut u, horizon, grid.nt, |_, _| {})?;
                Ok(grid.interpolate(&u, &origin))
            })
            .collect::<Result<Vec<_>>>()?;
        table = reduced;
        if level > 0 {
            let jump = max_central_jump(&table, nodes, grid);
            if jump > 10.0 * NESTED_TOLERANCE {
                warnings.push(format!(
                    "increment {}: adjacent tabulated values differ by up to {jump:.3e}; the parameter grid may be under-resolved",
                    level
                ));
            }
        }
    }
    Ok(NestedExpectation {
        value: table[0],
        warnings,
    })
}

fn max_central_jump(table: &[f64], nodes: usize, grid: &GridSpec) -> f64 {
    let mut jump: f64 = 0.0;
    for row in table.chunks(nodes) {
        for i in 0..nodes - 1 {
            if grid.is_central_coord(0, grid.coord(0, i)) && grid.is_central_coord(0, grid.coord(0, i + 1)) {
                jump = jump.max((row[i + 1] - row[i]).abs());
            }
        }
    }
    jump
}
