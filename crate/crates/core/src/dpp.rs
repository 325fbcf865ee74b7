//! Backward dynamic programming on a space-time grid.
//!
//! Each backward step freezes the control `v` and the volatility vertex `γ`
//! over one time step and evaluates the conditional expectation of the next
//! layer by Gauss–Hermite quadrature:
//!
//! ```text
//! V(t_k, x) = min_v max_γ Σ_q w_q V(t_{k+1}, x + (b + Σ h_ij γ_ij) dt + σ √γ ζ_q √dt)
//!                         + (f + Σ g_ij γ_ij) dt
//! ```
//!
//! The next layer is read through multilinear interpolation, clamped at the
//! boundary. Quadrature points launched from central nodes that land more
//! than one cell outside the grid raise [`Error::DomainEscape`].

use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{GridSpec, ValueField};
use crate::problem::{vertex_roots, Coefficients, LoadedProblem};
use crate::quadrature::GaussHermite;

/// Gauss–Hermite points per Brownian dimension.
pub const QUADRATURE_POINTS: usize = 5;

/// Quadrature points may land at most this many cells outside the grid.
pub const CLAMP_MARGIN_CELLS: f64 = 1.0;

/// Feedback control and worst-case vertex per backward step and node.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyField {
    pub grid: GridSpec,
    /// `t_0 .. t_{nt-1}`: the decision times.
    pub times: Vec<f64>,
    /// The discretized control list the indices refer to.
    pub controls: Vec<Vec<f64>>,
    pub control_index: Vec<Vec<usize>>,
    pub vertex_index: Vec<Vec<usize>>,
}

impl PolicyField {
    /// Decision layer in force at time `t`: the last `t_k ≤ t`.
    pub fn layer_at(&self, t: f64) -> usize {
        let mut k = 0;
        while k + 1 < self.times.len() && self.times[k + 1] <= t + 1e-12 {
            k += 1;
        }
        k
    }

    /// The control at `(t, x)`, each component interpolated multilinearly
    /// between node controls (clamped outside the grid).
    pub fn control_at(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let k = self.layer_at(t);
        let m = self.controls[0].len();
        (0..m)
            .map(|c| {
                let layer = &self.control_index[k];
                self.grid.interpolate_with(x, |i| self.controls[layer[i]][c])
            })
            .collect()
    }

    /// Worst-case vertex index at the node nearest `x`.
    pub fn vertex_at(&self, t: f64, x: &[f64]) -> usize {
        self.vertex_index[self.layer_at(t)][self.nearest_node(x)]
    }

    pub fn nearest_node(&self, x: &[f64]) -> usize {
        let g = &self.grid;
        (0..g.dim()).fold(0, |acc, k| {
            let h = g.spacing(k);
            let i = ((x[k] - g.x_lo[k]) / h).round().clamp(0.0, (g.nx[k] - 1) as f64) as usize;
            acc + i * g.stride(k)
        })
    }

    /// CSV with columns `t,x1[,x2],v1..vm,vertex`.
    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        let n = self.grid.dim();
        let m = self.controls[0].len();
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|k| format!("x{k}")));
        header.extend((1..=m).map(|k| format!("v{k}")));
        header.push("vertex".into());
        writeln!(out, "{}", header.join(","))?;
        let nodes = self.grid.nodes();
        for (k, &t) in self.times.iter().enumerate() {
            for (i, x) in nodes.iter().enumerate() {
                let mut row = vec![format!("{t:?}")];
                row.extend(x.iter().map(|c| format!("{c:?}")));
                row.extend(self.controls[self.control_index[k][i]].iter().map(|c| format!("{c:?}")));
                row.push(self.vertex_index[k][i].to_string());
                writeln!(out, "{}", row.join(","))?;
            }
        }
        Ok(())
    }

    /// Reads a CSV written by [`PolicyField::write_csv`] for the given grid.
    /// Control values are matched back to `controls`; unknown values are
    /// appended to the list.
    pub fn read_csv(
        input: impl BufRead,
        grid: &GridSpec,
        controls: &[Vec<f64>],
    ) -> Result<Self> {
        let n = grid.dim();
        let mut controls = controls.to_vec();
        let mut times: Vec<f64> = Vec::new();
        let mut control_index: Vec<Vec<usize>> = Vec::new();
        let mut vertex_index: Vec<Vec<usize>> = Vec::new();
        let bad = |line: usize, msg: &str| Error::Config(format!("policy CSV line {line}: {msg}"));
        let mut lines = input.lines().enumerate();
        let header = match lines.next() {
            Some((_, Ok(h))) => h,
            _ => return Err(bad(1, "missing header")),
        };
        let cols = header.split(',').count();
        if cols < n + 3 {
            return Err(bad(1, "too few columns"));
        }
        let m = cols - n - 2;
        for (ln, line) in lines {
            let line = line.map_err(|e| bad(ln + 1, &e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != cols {
                return Err(bad(ln + 1, "wrong number of columns"));
            }
            let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad(ln + 1, "not a number"));
            let t = num(fields[0])?;
            if times.last().is_none_or(|&last| last != t) {
                times.push(t);
                control_index.push(Vec::with_capacity(grid.node_count()));
                vertex_index.push(Vec::with_capacity(grid.node_count()));
            }
            let v = fields[1 + n..1 + n + m]
                .iter()
                .map(|s| num(s))
                .collect::<Result<Vec<_>>>()?;
            let idx = match controls.iter().position(|c| *c == v) {
                Some(j) => j,
                None => {
                    controls.push(v);
                    controls.len() - 1
                }
            };
            let vert = fields[cols - 1]
                .trim()
                .parse::<usize>()
                .map_err(|_| bad(ln + 1, "vertex index is not an integer"))?;
            control_index.last_mut().expect("layer").push(idx);
            vertex_index.last_mut().expect("layer").push(vert);
        }
        if times.is_empty() || control_index.iter().any(|l| l.len() != grid.node_count()) {
            return Err(Error::Config(
                "policy CSV does not match the problem grid".into(),
            ));
        }
        Ok(Self {
            grid: grid.clone(),
            times,
            controls,
            control_index,
            vertex_index,
        })
    }
}

/// One frozen `(v, γ)` transition at a node: where the quadrature points go
/// and what running cost accrues.
struct Transition {
    mean: Vec<f64>,
    /// `σ √γ`, `n × d`
    spread: DMatrix<f64>,
    cost: f64,
}

fn transition(c: &Coefficients, gamma: &DMatrix<f64>, root: &DMatrix<f64>, x: &[f64], dt: f64) -> Transition {
    let frozen = c.freeze(gamma);
    Transition {
        mean: x.iter().zip(&frozen.drift).map(|(xi, bi)| xi + bi * dt).collect(),
        spread: &c.sigma * root,
        cost: frozen.cost,
    }
}

/// Quadrature evaluation of one transition against `next`.
///
/// With `guard = Some(node)`, any point more than [`CLAMP_MARGIN_CELLS`]
/// outside the grid is an error.
fn expect_next(
    grid: &GridSpec,
    next: &[f64],
    tr: &Transition,
    quad: &GaussHermite,
    dt: f64,
    guard: Option<usize>,
) -> Result<f64> {
    let n = tr.mean.len();
    let sq = dt.sqrt();
    let mut point = vec![0.0; n];
    let mut acc = 0.0;
    for (z, w) in quad.nodes.iter().zip(&quad.weights) {
        for r in 0..n {
            let mut shift = 0.0;
            for (c, zc) in z.iter().enumerate() {
                shift += tr.spread[(r, c)] * zc;
            }
            point[r] = tr.mean[r] + shift * sq;
        }
        if let Some(node) = guard {
            if grid.cells_outside(&point) > CLAMP_MARGIN_CELLS {
                return Err(Error::DomainEscape {
                    node: grid.node(node),
                    point: point.clone(),
                });
            }
        }
        acc += w * grid.interpolate(next, &point);
    }
    Ok(acc + tr.cost * dt)
}

/// `Ê`-step under frozen `(v, γ)`: quadrature of `V_next` after one Euler
/// step of length `dt` from `(t, x)`, plus the running cost.
#[allow(clippy::too_many_arguments)]
pub fn one_step_value(
    lp: &LoadedProblem,
    next: &[f64],
    grid: &GridSpec,
    t: f64,
    dt: f64,
    x: &[f64],
    v: &[f64],
    vertex: usize,
) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(Error::Config(format!("time step must be positive, got {dt}")));
    }
    let c = lp.problem.coefficients(t, x, v)?;
    let gamma = lp.ambiguity.vertex(vertex);
    let root = crate::linalg::psd_sqrt(gamma);
    let quad = GaussHermite::tensor(lp.problem.d, QUADRATURE_POINTS);
    expect_next(grid, next, &transition(&c, gamma, &root, x, dt), &quad, dt, None)
}

/// Best control and worst vertex at one node.
#[derive(Debug, Clone, Copy, PartialEq)]
struct NodeDecision {
    value: f64,
    control: usize,
    vertex: usize,
}

struct Stepper<'a> {
    lp: &'a LoadedProblem,
    grid: &'a GridSpec,
    controls: &'a [Vec<f64>],
    roots: Vec<DMatrix<f64>>,
    quad: GaussHermite,
    nodes: Vec<Vec<f64>>,
    central: Vec<bool>,
}

impl<'a> Stepper<'a> {
    fn new(lp: &'a LoadedProblem, grid: &'a GridSpec, controls: &'a [Vec<f64>]) -> Result<Self> {
        if controls.is_empty() {
            return Err(Error::EmptyControls);
        }
        if !(1..=2).contains(&grid.dim()) {
            return Err(Error::Unsupported(format!(
                "dynamic programming grids of dimension {} (only 1 and 2)",
                grid.dim()
            )));
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
            roots: vertex_roots(&lp.ambiguity),
            quad: GaussHermite::tensor(lp.problem.d, QUADRATURE_POINTS),
            nodes: grid.nodes(),
            central: (0..grid.node_count()).map(|i| grid.is_central(i)).collect(),
        })
    }

    fn decide(&self, next: &[f64], t: f64, dt: f64, i: usize) -> Result<NodeDecision> {
        let x = &self.nodes[i];
        let guard = self.central[i].then_some(i);
        let mut best = NodeDecision {
            value: f64::INFINITY,
            control: 0,
            vertex: 0,
        };
        for (j, v) in self.controls.iter().enumerate() {
            let c = self.lp.problem.coefficients(t, x, v)?;
            let mut worst = f64::NEG_INFINITY;
            let mut worst_vertex = 0;
            for (k, (gamma, root)) in self.lp.ambiguity.vertices().iter().zip(&self.roots).enumerate() {
                let tr = transition(&c, gamma, root, x, dt);
                let val = expect_next(self.grid, next, &tr, &self.quad, dt, guard)?;
                if val > worst {
                    worst = val;
                    worst_vertex = k;
                }
            }
            if worst < best.value {
                best = NodeDecision {
                    value: worst,
                    control: j,
                    vertex: worst_vertex,
                };
            }
        }
        if !best.value.is_finite() {
            return Err(Error::NonFinite {
                step: 0,
                context: Some(format!("dynamic programming value at node {:?}", x)),
            });
        }
        Ok(best)
    }

    fn step(&self, next: &[f64], t: f64, dt: f64) -> Result<Vec<NodeDecision>> {
        (0..self.grid.node_count())
            .into_par_iter()
            .map(|i| self.decide(next, t, dt, i))
            .collect()
    }

    fn terminal(&self) -> Result<Vec<f64>> {
        self.nodes.iter().map(|x| self.lp.problem.terminal(x)).collect()
    }
}

fn tag_step(e: Error, step: usize) -> Error {
    match e {
        Error::NonFinite { context, .. } => Error::NonFinite { step, context },
        other => other,
    }
}

/// `V(T) = Φ`, then `V(t_k, x) = min_v max_γ one_step_value` down to `t_0 = 0`.
///
/// Ties go to the lowest control index and the lowest vertex index.
pub fn bellman_backward(
    lp: &LoadedProblem,
    grid: &GridSpec,
    controls: &[Vec<f64>],
) -> Result<(ValueField, PolicyField)> {
    let stepper = Stepper::new(lp, grid, controls)?;
    let nt = grid.nt;
    let horizon = lp.problem.horizon;
    let dt = horizon / nt as f64;
    let times: Vec<f64> = (0..=nt).map(|k| horizon * k as f64 / nt as f64).collect();
    let mut layers = vec![Vec::new(); nt + 1];
    layers[nt] = stepper.terminal()?;
    let mut control_index = vec![Vec::new(); nt];
    let mut vertex_index = vec![Vec::new(); nt];
    for k in (0..nt).rev() {
        let decisions = stepper
            .step(&layers[k + 1], times[k], dt)
            .map_err(|e| tag_step(e, k))?;
        layers[k] = decisions.iter().map(|d| d.value).collect();
        control_index[k] = decisions.iter().map(|d| d.control).collect();
        vertex_index[k] = decisions.iter().map(|d| d.vertex).collect();
    }
    let value = ValueField {
        grid: grid.clone(),
        times: times.clone(),
        layers,
    };
    let policy = PolicyField {
        grid: grid.clone(),
        times: times[..nt].to_vec(),
        controls: controls.to_vec(),
        control_index,
        vertex_index,
    };
    Ok((value, policy))
}

/// Outcome of [`dpp_consistency_check`].
#[derive(Debug, Clone, Serialize)]
pub struct ConsistencyReport {
    pub t: f64,
    pub delta: f64,
    /// Sup over central nodes of `|V(t) − W(t)|`, where `W` solves
    /// `[t, t+δ]` from the terminal data `V(t+δ)`.
    pub residual: f64,
    /// `h²/8 · max|D²V(t+δ)|`, the interpolation error of one read of the
    /// layer at `t+δ`.
    pub interpolation_bound: f64,
}

/// Compares `V(t, ·)` from the full backward pass with the composition
/// that takes the computed `V(t+δ, ·)` as terminal data and solves
/// `[t, t+δ]` again with half the time step.
///
/// `t` and `δ` must be multiples of the grid time step. For `δ = dt` the
/// composition is the backward recursion itself and the residual is zero.
pub fn dpp_consistency_check(
    lp: &LoadedProblem,
    grid: &GridSpec,
    controls: &[Vec<f64>],
    t: f64,
    delta: f64,
) -> Result<ConsistencyReport> {
    let (value, _) = bellman_backward(lp, grid, controls)?;
    consistency_from(lp, grid, controls, &value, t, delta)
}

/// As [`dpp_consistency_check`], reusing an existing backward pass.
pub fn consistency_from(
    lp: &LoadedProblem,
    grid: &GridSpec,
    controls: &[Vec<f64>],
    value: &ValueField,
    t: f64,
    delta: f64,
) -> Result<ConsistencyReport> {
    let dt = lp.problem.horizon / grid.nt as f64;
    let steps = |s: f64| -> Result<usize> {
        let r = s / dt;
        if (r - r.round()).abs() > 1e-9 {
            return Err(Error::Config(format!("{s} is not a multiple of the time step {dt}")));
        }
        Ok(r.round() as usize)
    };
    let k = steps(t)?;
    let j = steps(delta)?;
    if j == 0 || k + j > grid.nt {
        return Err(Error::Config(format!(
            "consistency check needs 0 < δ and t + δ ≤ T (t = {t}, δ = {delta})"
        )));
    }
    let stepper = Stepper::new(lp, grid, controls)?;
    // δ = dt is the recursion itself; longer segments are re-solved with
    // half the time step so the composition is a genuinely separate solve.
    let sub_steps = if j == 1 { 1 } else { 2 * j };
    let sub_dt = if j == 1 { dt } else { delta / sub_steps as f64 };
    let target = &value.layers[k + j];
    let mut layer = target.clone();
    for s in (0..sub_steps).rev() {
        let ts = value.times[k] + s as f64 * sub_dt;
        layer = stepper
            .step(&layer, ts, sub_dt)
            .map_err(|e| tag_step(e, s))?
            .into_iter()
            .map(|d| d.value)
            .collect();
    }
    let residual = grid
        .central_nodes()
        .into_iter()
        .map(|i| (layer[i] - value.layers[k][i]).abs())
        .fold(0.0, f64::max);
    Ok(ConsistencyReport {
        t,
        delta,
        residual,
        interpolation_bound: interpolation_bound(grid, target),
    })
}

/// `h²/8 · max |Δ²V / h²|` over axes and interior nodes.
fn interpolation_bound(grid: &GridSpec, layer: &[f64]) -> f64 {
    let mut bound: f64 = 0.0;
    for i in 0..grid.node_count() {
        let idx = grid.multi_index(i);
        for k in 0..grid.dim() {
            if idx[k] == 0 || idx[k] + 1 == grid.nx[k] {
                continue;
            }
            let s = grid.stride(k);
            let h = grid.spacing(k);
            let d2 = (layer[i + s] - 2.0 * layer[i] + layer[i - s]).abs() / (h * h);
            bound = bound.max(h * h / 8.0 * d2);
        }
    }
    bound
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::config::ProblemConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn problem(coeffs: serde_json::Value, controls: serde_json::Value, grid: serde_json::Value) -> LoadedProblem {
        let cfg = serde_json::json!({
            "name": "t", "state_dim": 1, "brownian_dim": 1, "control_dim": 1, "horizon": 1.0,
            "ambiguity": { "vertices": [[[0.0]], [[1.0]]] },
            "control_set": controls,
            "coefficients": coeffs,
            "grid": grid,
        });
        ProblemConfig::from_json(&cfg.to_string()).unwrap().build(false).unwrap()
    }

    /// Six standard deviations of margin around the central region.
    fn grid_json(h: f64, nt: usize) -> serde_json::Value {
        let nx = (24.0 / h).round() as usize + 1;
        serde_json::json!({ "x_lo": [-12.0], "x_hi": [12.0], "nx": [nx], "nt": nt })
    }

    fn single_control() -> serde_json::Value {
        serde_json::json!({ "type": "finite", "points": [[0.0]] })
    }

    #[test]
    fn one_step_examples() {
        let lp = problem(
            serde_json::json!({ "b": ["0"], "sigma": [["1"]], "f": "0", "phi": "0", "g": { "11": "1" } }),
            single_control(),
            grid_json(0.05, 10),
        );
        let g = &lp.grid;
        let sq: Vec<f64> = g.nodes().iter().map(|x| x[0] * x[0]).collect();
        let zero = vec![0.0; g.node_count()];
        let c = vec![3.5; g.node_count()];
        // g11 = 1 adds γ dt to every value
        let v = one_step_value(&lp, &zero, g, 0.0, 0.1, &[0.0], &[0.0], 1).unwrap();
        assert!((v - 0.1).abs() < 1e-14);
        let v = one_step_value(&lp, &c, g, 0.0, 0.1, &[0.0], &[0.0], 0).unwrap();
        assert_eq!(v, 3.5);
        let lp0 = problem(
            serde_json::json!({ "b": ["0"], "sigma": [["1"]], "f": "0", "phi": "0" }),
            single_control(),
            grid_json(0.05, 10),
        );
        // x² read through the interpolant at spread ±ζ√dt: quadrature is exact
        // on the interpolant, within h²/4 of the true parabola.
        let v = one_step_value(&lp0, &sq, g, 0.0, 0.01, &[0.0], &[0.0], 1).unwrap();
        assert!((v - 0.01).abs() < 0.05 * 0.05 / 4.0, "{v}");
    }

    #[test]
    fn drift_linear_and_runcost() {
        let controls = serde_json::json!({ "type": "box", "lo": [-1.0], "hi": [1.0], "counts": [21] });
        let lp = problem(
            serde_json::json!({ "b": ["v1"], "sigma": [["1"]], "f": "0", "phi": "x1" }),
            controls,
            grid_json(0.05, 20),
        );
        let (v, pol) = bellman_backward(&lp, &lp.grid, &lp.problem.controls().unwrap()).unwrap();
        assert!((v.at_layer(0, &[0.0]) + 1.0).abs() < 1e-2);
        assert!(v.central_error(0, |x| x[0] - 1.0) < 1e-2);
        for i in lp.grid.central_nodes() {
            assert_eq!(pol.controls[pol.control_index[0][i]], vec![-1.0]);
        }

        let controls = serde_json::json!({ "type": "box", "lo": [-1.0], "hi": [1.0], "counts": [41] });
        let lp = problem(
            serde_json::json!({ "b": ["v1"], "sigma": [["1"]], "f": "v1^2", "phi": "x1" }),
            controls,
            grid_json(0.05, 20),
        );
        let (v, pol) = bellman_backward(&lp, &lp.grid, &lp.problem.controls().unwrap()).unwrap();
        assert!((v.at_layer(0, &[0.0]) + 0.25).abs() < 1e-2);
        assert_eq!(pol.control_at(0.0, &[0.3]), vec![-0.5]);
    }

    #[test]
    fn degenerate_volatility_control() {
        let controls = serde_json::json!({ "type": "box", "lo": [1.0], "hi": [2.0], "counts": [11] });
        let nx = 201;
        let lp = problem(
            serde_json::json!({ "b": ["0"], "sigma": [["v1"]], "f": "0", "phi": "0-x1^2" }),
            controls,
            serde_json::json!({ "x_lo": [-10.0], "x_hi": [10.0], "nx": [nx], "nt": 20 }),
        );
        let (v, pol) = bellman_backward(&lp, &lp.grid, &lp.problem.controls().unwrap()).unwrap();
        assert!((v.at_layer(0, &[1.0]) + 1.0).abs() < 2e-2);
        // γ = 0 is the worst case everywhere in the interior
        let mid = lp.grid.node_count() / 2;
        assert_eq!(pol.vertex_index[0][mid], 0);
        let rep = consistency_from(&lp, &lp.grid, &lp.problem.controls().unwrap(), &v, 0.0, 0.5).unwrap();
        assert!(rep.residual <= 2e-2, "{rep:?}");
    }

    #[test]
    fn consistency_at_one_step_is_exact() {
        let controls = serde_json::json!({ "type": "box", "lo": [-1.0], "hi": [1.0], "counts": [5] });
        let lp = problem(
            serde_json::json!({ "b": ["v1"], "sigma": [["1"]], "f": "v1^2", "phi": "pos(x1)" }),
            controls,
            grid_json(0.1, 10),
        );
        let ctrl = lp.problem.controls().unwrap();
        let rep = dpp_consistency_check(&lp, &lp.grid, &ctrl, 0.3, 0.1).unwrap();
        assert_eq!(rep.residual, 0.0);
        assert!(dpp_consistency_check(&lp, &lp.grid, &ctrl, 0.3, 0.15).is_err());
    }

    #[test]
    fn domain_escape_on_small_grids() {
        let lp = problem(
            serde_json::json!({ "b": ["0"], "sigma": [["5"]], "f": "0", "phi": "x1" }),
            single_control(),
            serde_json::json!({ "x_lo": [-1.0], "x_hi": [1.0], "nx": [41], "nt": 1 }),
        );
        let err = bellman_backward(&lp, &lp.grid, &lp.problem.controls().unwrap()).unwrap_err();
        assert!(matches!(err, Error::DomainEscape { .. }), "{err}");
    }

    fn mixed() -> LoadedProblem {
        let controls = serde_json::json!({ "type": "box", "lo": [-1.0], "hi": [1.0], "counts": [5] });
        problem(
            serde_json::json!({ "b": ["v1 - 0.2*x1"], "sigma": [["1 + 0.5*v1^2"]], "f": "v1^2 + cos(x1)", "phi": "abs(x1)",
                                "h": { "11": ["0.3*v1"] }, "g": { "11": "0.5*sin(x1)" } }),
            controls,
            grid_json(0.1, 10),
        )
    }

    #[test]
    fn bellman_step_is_monotone_and_shift_equivariant() {
        let lp = mixed();
        let ctrl = lp.problem.controls().unwrap();
        let st = Stepper::new(&lp, &lp.grid, &ctrl).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = lp.grid.node_count();
        for _ in 0..5 {
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let up: Vec<f64> = w.iter().map(|v| v + rng.random_range(0.0..0.3)).collect();
            let a = st.step(&w, 0.0, 0.1).unwrap();
            let b = st.step(&up, 0.0, 0.1).unwrap();
            assert!(a.iter().zip(&b).all(|(x, y)| x.value <= y.value));
            let shifted: Vec<f64> = w.iter().map(|v| v + 1.25).collect();
            let c = st.step(&shifted, 0.0, 0.1).unwrap();
            assert!(a.iter().zip(&c).all(|(x, y)| (y.value - x.value - 1.25).abs() < 1e-12));
        }
    }

    #[test]
    fn stored_values_are_min_max_by_enumeration() {
        let lp = mixed();
        let ctrl = lp.problem.controls().unwrap();
        let (v, pol) = bellman_backward(&lp, &lp.grid, &ctrl).unwrap();
        let dt = lp.problem.horizon / lp.grid.nt as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let k = rng.random_range(0..lp.grid.nt);
            let i = rng.random_range(0..lp.grid.node_count());
            let x = lp.grid.node(i);
            let brute = ctrl
                .iter()
                .map(|u| {
                    (0..lp.ambiguity.len())
                        .map(|g| one_step_value(&lp, &v.layers[k + 1], &lp.grid, v.times[k], dt, &x, u, g).unwrap())
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .fold(f64::INFINITY, f64::min);
            assert!((brute - v.layers[k][i]).abs() < 1e-12);
            let j = pol.control_index[k][i];
            let g = pol.vertex_index[k][i];
            let chosen = one_step_value(&lp, &v.layers[k + 1], &lp.grid, v.times[k], dt, &x, &ctrl[j], g).unwrap();
            assert!((chosen - v.layers[k][i]).abs() < 1e-12);
        }
    }

    #[test]
    fn terminal_layer_and_growth() {
        let lp = mixed();
        let (v, _) = bellman_backward(&lp, &lp.grid, &lp.problem.controls().unwrap()).unwrap();
        for (x, val) in lp.grid.nodes().iter().zip(v.last()) {
            assert_eq!(*val, x[0].abs());
        }
        assert!(v.all_finite());
        assert!(v.growth_constant().is_finite());
    }

    #[test]
    fn policy_csv_round_trip() {
        let lp = mixed();
        let ctrl = lp.problem.controls().unwrap();
        let (_, pol) = bellman_backward(&lp, &lp.grid, &ctrl).unwrap();
        let mut buf = Vec::new();
        pol.write_csv(&mut buf).unwrap();
        let back = PolicyField::read_csv(&buf[..], &lp.grid, &ctrl).unwrap();
        assert_eq!(back, pol);
    }

    #[test]
    fn two_dimensional_states() {
        let cfg = serde_json::json!({
            "name": "t2", "state_dim": 2, "brownian_dim": 1, "control_dim": 1, "horizon": 1.0,
            "ambiguity": { "vertices": [[[0.0]], [[1.0]]] },
            "control_set": { "type": "box", "lo": [-1.0], "hi": [1.0], "counts": [3] },
            "coefficients": { "b": ["v1", "0"], "sigma": [["0"], ["1"]], "f": "0", "phi": "x1 + x2" },
            "grid": { "x_lo": [-8.0, -8.0], "x_hi": [8.0, 8.0], "nx": [41, 41], "nt": 10 }
        });
        let lp = ProblemConfig::from_json(&cfg.to_string()).unwrap().build(false).unwrap();
        let (v, _) = bellman_backward(&lp, &lp.grid, &lp.problem.controls().unwrap()).unwrap();
        assert!(v.central_error(0, |x| x[0] + x[1] - 1.0) < 1e-4);
    }
}
