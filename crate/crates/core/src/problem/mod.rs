//! Control problem instances: coefficients, control set, horizon, and the
//! JSON config format they are loaded from.

pub mod config;
pub mod expr;

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::ambiguity::{AmbiguitySet, H3Certificate};
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::linalg;
use expr::{Expr, Vars};

pub use config::{load_problem, load_problem_str, ProblemConfig};

/// Compact control set `U ⊂ ℝ^m`.
#[derive(Debug, Clone, PartialEq)]
pub enum ControlSet {
    Box {
        lo: Vec<f64>,
        hi: Vec<f64>,
        counts: Vec<usize>,
    },
    Finite {
        points: Vec<Vec<f64>>,
    },
}

impl ControlSet {
    pub fn dim(&self) -> usize {
        match self {
            ControlSet::Box { lo, .. } => lo.len(),
            ControlSet::Finite { points } => points.first().map_or(0, Vec::len),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ControlSet::Box { lo, hi, counts } => {
                if lo.len() != hi.len() || lo.len() != counts.len() {
                    return Err(Error::Config(
                        "control box lo, hi and counts must have equal length".into(),
                    ));
                }
                if lo.is_empty() {
                    return Err(Error::Config("control box has no components".into()));
                }
                for k in 0..lo.len() {
                    if !(lo[k].is_finite() && hi[k].is_finite() && lo[k] <= hi[k]) {
                        return Err(Error::Config(format!(
                            "control box axis {k}: need finite lo <= hi, got [{}, {}]",
                            lo[k], hi[k]
                        )));
                    }
                    if counts[k] == 0 {
                        return Err(Error::Config(format!("control box axis {k}: count must be >= 1")));
                    }
                }
                Ok(())
            }
            ControlSet::Finite { points } => {
                let first = points.first().ok_or(Error::EmptyControls)?;
                if first.is_empty() {
                    return Err(Error::Config("control points have no components".into()));
                }
                for p in points {
                    if p.len() != first.len() {
                        return Err(Error::DimensionMismatch {
                            what: "control point".into(),
                            expected: first.len(),
                            got: p.len(),
                        });
                    }
                    if p.iter().any(|x| !x.is_finite()) {
                        return Err(Error::Config("control points must be finite".into()));
                    }
                }
                Ok(())
            }
        }
    }

    pub fn contains(&self, u: &[f64]) -> bool {
        match self {
            ControlSet::Box { lo, hi, .. } => u
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(x, (l, h))| *l <= *x && *x <= *h),
            ControlSet::Finite { points } => points.iter().any(|p| p.as_slice() == u),
        }
    }
}

/// Finite list of controls standing in for `U` in every `inf_{v∈U}`.
///
/// Boxes become tensor grids including endpoints (a single point per axis is
/// the midpoint); the first component varies slowest. Finite sets are
/// returned verbatim.
pub fn discretize_controls(cs: &ControlSet) -> Vec<Vec<f64>> {
    match cs {
        ControlSet::Finite { points } => points.clone(),
        ControlSet::Box { lo, hi, counts } => {
            let axes: Vec<Vec<f64>> = (0..lo.len())
                .map(|k| {
                    if counts[k] == 1 {
                        vec![0.5 * (lo[k] + hi[k])]
                    } else {
                        let n = counts[k] - 1;
                        (0..=n)
                            .map(|i| {
                                if i == n {
                                    hi[k]
                                } else {
                                    lo[k] + (hi[k] - lo[k]) * i as f64 / n as f64
                                }
                            })
                            .collect()
                    }
                })
                .collect();
            let mut out: Vec<Vec<f64>> = vec![Vec::new()];
            for axis in &axes {
                out = out
                    .into_iter()
                    .flat_map(|prefix| {
                        axis.iter().map(move |&x| {
                            let mut p = prefix.clone();
                            p.push(x);
                            p
                        })
                    })
                    .collect();
            }
            out
        }
    }
}

/// Coefficients of the controlled SDE and cost.
///
/// `h` and `g` store only the upper triangle `i ≤ j` (zero-based keys); the
/// lower triangle is implied by symmetry. Missing entries are zero.
#[derive(Debug, Clone)]
pub struct ControlProblem {
    pub name: String,
    pub n: usize,
    pub d: usize,
    pub m: usize,
    pub horizon: f64,
    pub b: Vec<Expr>,
    pub h: BTreeMap<(usize, usize), Vec<Expr>>,
    pub sigma: Vec<Vec<Expr>>,
    pub f: Expr,
    pub g: BTreeMap<(usize, usize), Expr>,
    pub phi: Expr,
    pub control_set: ControlSet,
}

/// Coefficients evaluated at one `(t, x, v)`.
#[derive(Debug, Clone)]
pub struct Coefficients {
    pub b: Vec<f64>,
    /// Full symmetric `d × d` array of `n`-vectors, row-major.
    pub h: Vec<Vec<f64>>,
    pub sigma: DMatrix<f64>,
    pub f: f64,
    /// Full symmetric `d × d`.
    pub g: DMatrix<f64>,
}

/// The linear generator obtained by freezing the volatility at one vertex γ:
/// `½ tr[a D²φ] + ⟨drift, ∇φ⟩ + cost`.
#[derive(Debug, Clone)]
pub struct FrozenGenerator {
    /// `b + Σ_ij h_ij γ_ij`
    pub drift: Vec<f64>,
    /// `σ γ σᵀ`
    pub diffusion: DMatrix<f64>,
    /// `f + Σ_ij g_ij γ_ij`
    pub cost: f64,
}

impl Coefficients {
    pub fn h_entry(&self, i: usize, j: usize, d: usize) -> &[f64] {
        &self.h[i * d + j]
    }

    pub fn freeze(&self, gamma: &DMatrix<f64>) -> FrozenGenerator {
        let d = gamma.nrows();
        let mut drift = self.b.clone();
        let mut cost = self.f;
        for i in 0..d {
            for j in 0..d {
                let w = gamma[(i, j)];
                if w == 0.0 {
                    continue;
                }
                for (acc, h) in drift.iter_mut().zip(self.h_entry(i, j, d)) {
                    *acc += h * w;
                }
                cost += self.g[(i, j)] * w;
            }
        }
        let diffusion = &self.sigma * gamma * self.sigma.transpose();
        FrozenGenerator {
            drift,
            diffusion,
            cost,
        }
    }
}

impl ControlProblem {
    /// Evaluates every coefficient at `(t, x, v)`.
    pub fn coefficients(&self, t: f64, x: &[f64], v: &[f64]) -> Result<Coefficients> {
        let vars = Vars { t, x, v, y: &[] };
        let ev = |e: &Expr, field: &dyn Fn() -> String| {
            e.eval_vars(&vars).map_err(|err| Error::coefficient(field(), err))
        };
        let b = self
            .b
            .iter()
            .enumerate()
            .map(|(k, e)| ev(e, &|| format!("b[{k}]")))
            .collect::<Result<Vec<_>>>()?;
        let mut h = vec![vec![0.0; self.n]; self.d * self.d];
        for (&(i, j), exprs) in &self.h {
            for (k, e) in exprs.iter().enumerate() {
                let val = ev(e, &|| format!("h{}{}[{k}]", i + 1, j + 1))?;
                h[i * self.d + j][k] = val;
                h[j * self.d + i][k] = val;
            }
        }
        let mut sigma = DMatrix::zeros(self.n, self.d);
        for (r, row) in self.sigma.iter().enumerate() {
            for (c, e) in row.iter().enumerate() {
                sigma[(r, c)] = ev(e, &|| format!("sigma[{r}][{c}]"))?;
            }
        }
        let f = ev(&self.f, &|| "f".to_string())?;
        let mut g = DMatrix::zeros(self.d, self.d);
        for (&(i, j), e) in &self.g {
            let val = ev(e, &|| format!("g{}{}", i + 1, j + 1))?;
            g[(i, j)] = val;
            g[(j, i)] = val;
        }
        Ok(Coefficients { b, h, sigma, f, g })
    }

    pub fn terminal(&self, x: &[f64]) -> Result<f64> {
        self.phi
            .eval(self.horizon, x, &[])
            .map_err(|e| Error::coefficient("phi", e))
    }

    /// True if some SDE or running-cost coefficient mentions `t`.
    pub fn is_time_dependent(&self) -> bool {
        self.all_coefficient_exprs().any(Expr::depends_on_time)
    }

    fn all_coefficient_exprs(&self) -> impl Iterator<Item = &Expr> {
        self.b
            .iter()
            .chain(self.h.values().flatten())
            .chain(self.sigma.iter().flatten())
            .chain(std::iter::once(&self.f))
            .chain(self.g.values())
    }

    pub fn controls(&self) -> Result<Vec<Vec<f64>>> {
        let list = discretize_controls(&self.control_set);
        if list.is_empty() {
            return Err(Error::EmptyControls);
        }
        Ok(list)
    }

    /// Structural checks on dimensions and the control set.
    pub fn validate(&self) -> Result<()> {
        let dim = |what: &str, expected: usize, got: usize| {
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
        if self.n == 0 || self.d == 0 || self.m == 0 {
            return Err(Error::Config("state, Brownian and control dimensions must be positive".into()));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::Config(format!("horizon must be positive, got {}", self.horizon)));
        }
        dim("b", self.n, self.b.len())?;
        dim("sigma rows", self.n, self.sigma.len())?;
        for row in &self.sigma {
            dim("sigma columns", self.d, row.len())?;
        }
        for (&(i, j), exprs) in &self.h {
            if i > j || j >= self.d {
                return Err(Error::Config(format!("h{}{} is not an upper-triangle entry", i + 1, j + 1)));
            }
            dim("h entry", self.n, exprs.len())?;
        }
        for &(i, j) in self.g.keys() {
            if i > j || j >= self.d {
                return Err(Error::Config(format!("g{}{} is not an upper-triangle entry", i + 1, j + 1)));
            }
        }
        self.control_set.validate()?;
        dim("control set", self.m, self.control_set.dim())
    }

    /// Finite-difference Lipschitz ratios of `b`, `h`, `σ` in `(x, v)` on
    /// random pairs drawn from `box_lo..box_hi × U`, at two sampling radii.
    pub fn lipschitz_spot_check(
        &self,
        box_lo: &[f64],
        box_hi: &[f64],
        samples: usize,
        seed: u64,
    ) -> LipschitzReport {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let controls = discretize_controls(&self.control_set);
        let (ulo, uhi) = control_hull(&controls);
        let mut ratios = [0.0f64; 2];
        let mut failures = 0usize;
        for (slot, scale) in [1.0f64, 2.0].into_iter().enumerate() {
            for _ in 0..samples {
                let draw = |rng: &mut ChaCha8Rng, lo: &[f64], hi: &[f64], scale: f64| -> Vec<f64> {
                    lo.iter()
                        .zip(hi)
                        .map(|(&l, &h)| {
                            let c = 0.5 * (l + h);
                            let r = 0.5 * (h - l) * scale;
                            c + r * (2.0 * rng.random::<f64>() - 1.0)
                        })
                        .collect()
                };
                let t = self.horizon * rng.random::<f64>();
                let x1 = draw(&mut rng, box_lo, box_hi, scale);
                let x2 = draw(&mut rng, box_lo, box_hi, scale);
                let v1 = draw(&mut rng, &ulo, &uhi, 1.0);
                let v2 = draw(&mut rng, &ulo, &uhi, 1.0);
                let (Ok(c1), Ok(c2)) = (self.coefficients(t, &x1, &v1), self.coefficients(t, &x2, &v2))
                else {
                    failures += 1;
                    continue;
                };
                let dist = euclid(&x1, &x2) + euclid(&v1, &v2);
                if dist == 0.0 {
                    continue;
                }
                let diff = euclid(&c1.b, &c2.b)
                    + c1.h.iter().zip(&c2.h).map(|(a, b)| euclid(a, b)).sum::<f64>()
                    + (&c1.sigma - &c2.sigma).norm();
                ratios[slot] = ratios[slot].max(diff / dist);
            }
        }
        let mut warnings = Vec::new();
        if failures > 0 {
            warnings.push(format!("{failures} coefficient evaluations failed during the Lipschitz spot check"));
        }
        if !ratios.iter().all(|r| r.is_finite()) {
            warnings.push("coefficient Lipschitz ratio is not finite".into());
        } else if ratios[1] > 1.5 * ratios[0] + 1e-12 {
            warnings.push(format!(
                "Lipschitz ratio of b, h, sigma grows with the sampling range ({:.3e} -> {:.3e}); global Lipschitz continuity is doubtful",
                ratios[0], ratios[1]
            ));
        }
        LipschitzReport {
            ratio: ratios[0],
            ratio_wide: ratios[1],
            warnings,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LipschitzReport {
    pub ratio: f64,
    pub ratio_wide: f64,
    pub warnings: Vec<String>,
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn control_hull(controls: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let m = controls.first().map_or(0, Vec::len);
    let mut lo = vec![f64::INFINITY; m];
    let mut hi = vec![f64::NEG_INFINITY; m];
    for c in controls {
        for k in 0..m {
            lo[k] = lo[k].min(c[k]);
            hi[k] = hi[k].max(c[k]);
        }
    }
    (lo, hi)
}

/// A problem as loaded from a config file or the builtin registry.
#[derive(Debug, Clone)]
pub struct LoadedProblem {
    pub problem: ControlProblem,
    pub ambiguity: AmbiguitySet,
    pub grid: GridSpec,
    /// Present whenever some Brownian component is non-degenerate. Always
    /// present for config-loaded problems.
    pub h3: Option<H3Certificate>,
    pub warnings: Vec<String>,
}

impl LoadedProblem {
    pub fn frozen_generators(
        &self,
        t: f64,
        x: &[f64],
        v: &[f64],
    ) -> Result<Vec<FrozenGenerator>> {
        let c = self.problem.coefficients(t, x, v)?;
        Ok(self.ambiguity.vertices().iter().map(|g| c.freeze(g)).collect())
    }
}

/// Symmetric square roots of the vertices, in vertex order.
pub(crate) fn vertex_roots(s: &AmbiguitySet) -> Vec<DMatrix<f64>> {
    s.vertices().iter().map(linalg::psd_sqrt).collect()
}
