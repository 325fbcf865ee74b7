//! The Hamilton–Jacobi–Bellman equation
//! `∂_t V + inf_v H(t, x, ∂_x V, ∂²_xx V, v) = 0`, `V(T, ·) = Φ`, and the
//! Hamiltonian algebra behind it.
//!
//! With `F_ij = (σᵀAσ)_ij + 2⟨p, h_ij⟩ + 2 g_ij` the Hamiltonian is
//! `H = G(F) + ⟨p, b⟩ + f`, which equals the maximum over vertices `γ` of the
//! frozen linear generator `½ tr[A σγσᵀ] + ⟨p, b + Σ h_ij γ_ij⟩ + f + Σ g_ij γ_ij`.
//! The solver discretizes the frozen generators with monotone stencils
//! (upwinded per vertex and control) and steps backward explicitly.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::ambiguity::AmbiguitySet;
use crate::error::{Error, Result};
use crate::gheat::MAX_SUBSTEPS;
use crate::grid::{GridSpec, ValueField};
use crate::linalg;
use crate::problem::{ControlProblem, LoadedProblem};
use crate::stencil::{Layout, Stencil};

/// Substeps are chosen so that `dt · max_rate` stays below this.
pub const CFL_TARGET: f64 = 0.5;

/// Arguments of the Hamiltonian: `p` stands for `∂_x V`, `a` for `∂²_xx V`.
#[derive(Debug, Clone)]
pub struct HamiltonianInputs {
    pub t: f64,
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub a: DMatrix<f64>,
    pub v: Vec<f64>,
}

struct Assembled {
    f_matrix: DMatrix<f64>,
    linear: f64,
}

fn assemble(problem: &ControlProblem, s: &AmbiguitySet, inp: &HamiltonianInputs) -> Result<Assembled> {
    let (n, d, m) = (problem.n, problem.d, problem.m);
    let check = |what: &str, expected: usize, got: usize| {
        if expected == got {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                what: what.into(),
                expected,
                got,
            })
        }
    };
    check("x", n, inp.x.len())?;
    check("p", n, inp.p.len())?;
    check("A rows", n, inp.a.nrows())?;
    check("A columns", n, inp.a.ncols())?;
    check("v", m, inp.v.len())?;
    check("ambiguity dimension", d, s.dim())?;
    linalg::check_symmetric("A", &inp.a, 1e-12)?;
    let c = problem.coefficients(inp.t, &inp.x, &inp.v)?;
    let mut f = c.sigma.transpose() * &inp.a * &c.sigma;
    for i in 0..d {
        for j in 0..d {
            let ph: f64 = inp.p.iter().zip(c.h_entry(i, j, d)).map(|(p, h)| p * h).sum();
            f[(i, j)] += 2.0 * ph + 2.0 * c.g[(i, j)];
        }
    }
    // σᵀAσ is symmetric in exact arithmetic; remove rounding asymmetry.
    let f = 0.5 * (&f + f.transpose());
    let pb: f64 = inp.p.iter().zip(&c.b).map(|(p, b)| p * b).sum();
    Ok(Assembled {
        f_matrix: f,
        linear: pb + c.f,
    })
}

/// `H = G(F) + ⟨p, b⟩ + f` at the given inputs.
pub fn hamiltonian(problem: &ControlProblem, s: &AmbiguitySet, inp: &HamiltonianInputs) -> Result<f64> {
    let asm = assemble(problem, s, inp)?;
    Ok(s.g(&asm.f_matrix)? + asm.linear)
}

/// `Λ₁ + 2 G(½F)` with `Λ₁ = φ_t + ⟨b, p⟩ + f`. Equal to
/// `phi_t + hamiltonian(...)` by positive homogeneity of `G`.
pub fn lambda_decomposition(
    problem: &ControlProblem,
    s: &AmbiguitySet,
    phi_t: f64,
    inp: &HamiltonianInputs,
) -> Result<f64> {
    let asm = assemble(problem, s, inp)?;
    let half = asm.f_matrix * 0.5;
    Ok(phi_t + asm.linear + 2.0 * s.g(&half)?)
}

/// All frozen stencils on a grid at one time, indexed
/// `[(node * controls + control) * vertices + vertex]`.
struct StencilBank {
    stencils: Vec<Stencil>,
    controls: usize,
    vertices: usize,
    max_rate: f64,
}

struct Assembler<'a> {
    lp: &'a LoadedProblem,
    grid: &'a GridSpec,
    controls: &'a [Vec<f64>],
    layout: Layout,
    nodes: Vec<Vec<f64>>,
}

impl<'a> Assembler<'a> {
    fn new(lp: &'a LoadedProblem, grid: &'a GridSpec, controls: &'a [Vec<f64>]) -> Result<Self> {
        if controls.is_empty() {
            return Err(Error::EmptyControls);
        }
        if grid.dim() != lp.problem.n {
            return Err(Error::DimensionMismatch {
                what: "grid vs state_dim".into(),
                expected: lp.problem.n,
                got: grid.dim(),
            });
        }
        Ok(Self {
            lp,
            grid,
            controls,
            layout: Layout::new(grid)?,
            nodes: grid.nodes(),
        })
    }

    fn bank(&self, t: f64) -> Result<StencilBank> {
        let nv = self.lp.ambiguity.len();
        let per_node: Vec<Vec<Stencil>> = (0..self.nodes.len())
            .into_par_iter()
            .map(|i| {
                let idx = self.grid.multi_index(i);
                let mut out = Vec::with_capacity(self.controls.len() * nv);
                for v in self.controls {
                    for gen in self.lp.frozen_generators(t, &self.nodes[i], v)? {
                        out.push(self.layout.build(&idx, &gen.diffusion, &gen.drift, gen.cost)?);
                    }
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;
        let stencils: Vec<Stencil> = per_node.into_iter().flatten().collect();
        let max_rate = stencils.iter().map(Stencil::rate).fold(0.0, f64::max);
        if !max_rate.is_finite() {
            return Err(Error::NonFinite {
                step: 0,
                context: Some("HJB stencil weights".into()),
            });
        }
        Ok(StencilBank {
            stencils,
            controls: self.controls.len(),
            vertices: nv,
            max_rate,
        })
    }

    /// `min_v max_γ L_{v,γ} u` at node `i`.
    fn generator(&self, bank: &StencilBank, u: &[f64], i: usize) -> f64 {
        let per_node = bank.controls * bank.vertices;
        let base = i * per_node;
        let mut best = f64::INFINITY;
        for c in 0..bank.controls {
            let off = base + c * bank.vertices;
            let mut worst = f64::NEG_INFINITY;
            for s in &bank.stencils[off..off + bank.vertices] {
                worst = worst.max(self.layout.apply(s, u, i));
            }
            best = best.min(worst);
        }
        best
    }

    /// One explicit backward step `u ← u + dt · min_v max_γ L u`.
    fn step(&self, bank: &StencilBank, u: &[f64], dt: f64) -> Vec<f64> {
        (0..u.len())
            .into_par_iter()
            .map(|i| u[i] + dt * self.generator(bank, u, i))
            .collect()
    }
}

fn substeps_for(layer_dt: f64, max_rate: f64) -> f64 {
    if max_rate == 0.0 {
        1.0
    } else {
        (layer_dt * max_rate / CFL_TARGET).ceil().max(1.0)
    }
}

/// Solves the HJB equation backward from `V(T) = Φ` on `grid`, minimizing
/// over the given control list. Layers are stored at `t_k = k T / nt`.
pub fn solve_hjb(lp: &LoadedProblem, grid: &GridSpec, controls: &[Vec<f64>]) -> Result<ValueField> {
    let asm = Assembler::new(lp, grid, controls)?;
    let nt = grid.nt;
    let horizon = lp.problem.horizon;
    let layer_dt = horizon / nt as f64;
    let times: Vec<f64> = (0..=nt).map(|k| horizon * k as f64 / nt as f64).collect();
    let mut layers = vec![Vec::new(); nt + 1];
    layers[nt] = asm
        .nodes
        .iter()
        .map(|x| lp.problem.terminal(x))
        .collect::<Result<Vec<_>>>()?;

    let frozen_bank = if lp.problem.is_time_dependent() {
        None
    } else {
        let bank = asm.bank(0.0)?;
        let total = substeps_for(layer_dt, bank.max_rate) * nt as f64;
        if total > MAX_SUBSTEPS as f64 {
            return Err(Error::CflOverflow {
                required: total as u64,
                limit: MAX_SUBSTEPS,
            });
        }
        Some(bank)
    };

    let mut used = 0u64;
    for k in (0..nt).rev() {
        let mut u = layers[k + 1].clone();
        match &frozen_bank {
            Some(bank) => {
                let n = substeps_for(layer_dt, bank.max_rate) as usize;
                let dt = layer_dt / n as f64;
                for _ in 0..n {
                    u = asm.step(bank, &u, dt);
                }
            }
            None => {
                let rate = asm.bank(times[k + 1])?.max_rate.max(asm.bank(times[k])?.max_rate);
                let n = substeps_for(layer_dt, rate);
                used += n as u64;
                if used > MAX_SUBSTEPS || n > MAX_SUBSTEPS as f64 {
                    return Err(Error::CflOverflow {
                        required: (n as u64).saturating_mul(nt as u64),
                        limit: MAX_SUBSTEPS,
                    });
                }
                let n = n as usize;
                let dt = layer_dt / n as f64;
                for s in 0..n {
                    let t = times[k + 1] - s as f64 * dt;
                    let bank = asm.bank(t)?;
                    u = asm.step(&bank, &u, dt);
                }
            }
        }
        if let Some(bad) = u.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                step: k,
                context: Some(format!("HJB node {bad}")),
            });
        }
        layers[k] = u;
    }
    Ok(ValueField {
        grid: grid.clone(),
        times,
        layers,
    })
}

/// What a convergence study compares against.
pub enum Reference<'a> {
    /// A closed-form `V(t, x)`.
    Exact(&'a dyn Fn(f64, &[f64]) -> f64),
    /// The solution on the finest grid of the study, interpolated.
    FinestGrid,
}

#[derive(Debug, Clone, Serialize)]
pub struct GridSummary {
    pub h: Vec<f64>,
    pub nx: Vec<usize>,
    pub nt: usize,
}

/// Errors at `t = 0` on the central region per grid, and the observed order.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub grids: Vec<GridSummary>,
    pub sup_error: Vec<f64>,
    /// Least-squares slope of `log(error)` against `log(h)`; `None` when the
    /// errors are at rounding level so that no rate is observable.
    pub order: Option<f64>,
}

/// Errors below this are treated as exact reproduction.
pub const ROUNDOFF_ERROR: f64 = 1e-9;

/// Solves on each grid and tabulates the sup error at `t = 0` over the
/// central region of the coarsest grid.
pub fn convergence_study(
    lp: &LoadedProblem,
    grids: &[GridSpec],
    controls: &[Vec<f64>],
    reference: Reference<'_>,
) -> Result<ConvergenceReport> {
    if grids.len() < 2 {
        return Err(Error::Config("a convergence study needs at least two grids".into()));
    }
    let fields = grids
        .iter()
        .map(|g| solve_hjb(lp, g, controls))
        .collect::<Result<Vec<_>>>()?;
    let (probe_grid, candidates) = match reference {
        Reference::Exact(_) => (&grids[0], grids.len()),
        Reference::FinestGrid => (&grids[0], grids.len() - 1),
    };
    let probes: Vec<Vec<f64>> = probe_grid
        .central_nodes()
        .into_iter()
        .map(|i| probe_grid.node(i))
        .collect();
    let sup_error: Vec<f64> = fields[..candidates]
        .iter()
        .map(|f| {
            probes
                .iter()
                .map(|x| {
                    let exact = match &reference {
                        Reference::Exact(v) => v(0.0, x),
                        Reference::FinestGrid => fields[grids.len() - 1].at_layer(0, x),
                    };
                    (f.at_layer(0, x) - exact).abs()
                })
                .fold(0.0, f64::max)
        })
        .collect();
    let hs: Vec<f64> = grids[..candidates]
        .iter()
        .map(|g| g.spacings().into_iter().fold(0.0, f64::max))
        .collect();
    Ok(ConvergenceReport {
        grids: grids
            .iter()
            .map(|g| GridSummary {
                h: g.spacings(),
                nx: g.nx.clone(),
                nt: g.nt,
            })
            .collect(),
        order: observed_order(&hs, &sup_error),
        sup_error,
    })
}

fn observed_order(hs: &[f64], errors: &[f64]) -> Option<f64> {
    if errors.len() < 2 || errors.iter().all(|&e| e <= ROUNDOFF_ERROR) {
        return None;
    }
    let pts: Vec<(f64, f64)> = hs
        .iter()
        .zip(errors)
        .map(|(h, e)| (h.ln(), e.max(f64::MIN_POSITIVE).ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}
