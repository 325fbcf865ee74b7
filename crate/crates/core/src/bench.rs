//! Builtin benchmark problems with closed-form value functions.
//!
//! Every entry is checked against the HJB equation when it is registered:
//! the closed form must make `∂_t V + min_v H(t, x, ∂_x V, ∂²_xx V, v)`
//! vanish (within [`SELF_CHECK_TOLERANCE`]) at [`SELF_CHECK_SAMPLES`] random
//! points, with derivatives taken by finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hjb::{hamiltonian, HamiltonianInputs};
use crate::problem::config::ProblemConfig;
use crate::problem::LoadedProblem;

/// Closed-form value function `V(t, x)`.
pub type ClosedForm = fn(f64, &[f64]) -> f64;

pub const SELF_CHECK_SAMPLES: usize = 200;
pub const SELF_CHECK_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct BenchmarkEntry {
    pub name: &'static str,
    pub description: &'static str,
    /// Human-readable closed form.
    pub closed_form_text: &'static str,
    pub closed_form: ClosedForm,
    /// Sup-error tolerance on the central region at `t = 0`.
    pub tolerance: f64,
    /// Why the closed form is correct.
    pub provenance: &'static str,
    pub config: ProblemConfig,
}

/// Serializable summary for listings.
#[derive(Debug, Clone, Serialize)]
pub struct BenchmarkSummary {
    pub name: String,
    pub description: String,
    pub closed_form: String,
    pub tolerance: f64,
    pub provenance: String,
}

impl BenchmarkEntry {
    /// Builds the problem. Builtins need not satisfy the H3 condition.
    pub fn load(&self) -> Result<LoadedProblem> {
        self.config.build(false)
    }

    pub fn summary(&self) -> BenchmarkSummary {
        BenchmarkSummary {
            name: self.name.into(),
            description: self.description.into(),
            closed_form: self.closed_form_text.into(),
            tolerance: self.tolerance,
            provenance: self.provenance.into(),
        }
    }

    /// Largest HJB residual of the closed form over random points with
    /// `t ∈ [0, 0.9 T]` and `x` in the central region of the grid.
    pub fn hjb_residual(&self, samples: usize, seed: u64) -> Result<f64> {
        let lp = self.load()?;
        let p = &lp.problem;
        let controls = p.controls()?;
        let (lo, hi) = lp.grid.central_box();
        let v = self.closed_form;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..samples {
            let t = 0.9 * p.horizon * rng.random::<f64>();
            let x: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| rng.random_range(*l..*h)).collect();
            let (vt, grad, hess) = derivatives(v, t, &x);
            let inf_h = controls
                .iter()
                .map(|u| {
                    hamiltonian(
                        p,
                        &lp.ambiguity,
                        &HamiltonianInputs {
                            t,
                            x: x.clone(),
                            p: grad.clone(),
                            a: hess.clone(),
                            v: u.clone(),
                        },
                    )
                })
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .fold(f64::INFINITY, f64::min);
            worst = worst.max((vt + inf_h).abs());
        }
        Ok(worst)
    }
}

const FIRST_STEP: f64 = 1e-5;
const SECOND_STEP: f64 = 1e-3;

/// `∂_t V`, `∇V` by central differences of step 1e-5 and `D²V` by the
/// five-point formula of step 1e-3 (mixed terms by the four-corner formula).
fn derivatives(v: ClosedForm, t: f64, x: &[f64]) -> (f64, Vec<f64>, nalgebra::DMatrix<f64>) {
    let n = x.len();
    let shift = |k: usize, h: f64| {
        let mut y = x.to_vec();
        y[k] += h;
        y
    };
    let vt = (v(t + FIRST_STEP, x) - v(t - FIRST_STEP, x)) / (2.0 * FIRST_STEP);
    let grad = (0..n)
        .map(|k| (v(t, &shift(k, FIRST_STEP)) - v(t, &shift(k, -FIRST_STEP))) / (2.0 * FIRST_STEP))
        .collect();
    let h = SECOND_STEP;
    let mut hess = nalgebra::DMatrix::zeros(n, n);
    for k in 0..n {
        let f = |s: f64| v(t, &shift(k, s * h));
        hess[(k, k)] = (-f(2.0) + 16.0 * f(1.0) - 30.0 * f(0.0) + 16.0 * f(-1.0) - f(-2.0)) / (12.0 * h * h);
        for l in k + 1..n {
            let g = |a: f64, b: f64| {
                let mut y = x.to_vec();
                y[k] += a * h;
                y[l] += b * h;
                v(t, &y)
            };
            let m = (g(1.0, 1.0) - g(1.0, -1.0) - g(-1.0, 1.0) + g(-1.0, -1.0)) / (4.0 * h * h);
            hess[(k, l)] = m;
            hess[(l, k)] = m;
        }
    }
    (vt, grad, hess)
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

const HORIZON: f64 = 1.0;

fn drift_linear(t: f64, x: &[f64]) -> f64 {
    x[0] - (HORIZON - t)
}

fn minus_square(_t: f64, x: &[f64]) -> f64 {
    -x[0] * x[0]
}

fn runcost(t: f64, x: &[f64]) -> f64 {
    x[0] - 0.25 * (HORIZON - t)
}

fn qv_cost(t: f64, _x: &[f64]) -> f64 {
    HORIZON - t
}

/// `E[(x + s Z)⁺] = x N(x/s) + s φ(x/s)` with `s = √(T − t)`.
fn gheat_convex(t: f64, x: &[f64]) -> f64 {
    let s = (HORIZON - t).max(0.0).sqrt();
    if s == 0.0 {
        return x[0].max(0.0);
    }
    let z = x[0] / s;
    x[0] * normal_cdf(z) + s * normal_pdf(z)
}

/// Grids put six standard deviations of the largest volatility between the
/// central reporting region and the boundary.
fn config(
    name: &str,
    vertices: serde_json::Value,
    control_set: serde_json::Value,
    coefficients: serde_json::Value,
    x_range: f64,
    nx: usize,
    nt: usize,
) -> ProblemConfig {
    let value = serde_json::json!({
        "name": name,
        "state_dim": 1, "brownian_dim": 1, "control_dim": 1, "horizon": HORIZON,
        "ambiguity": { "vertices": vertices },
        "control_set": control_set,
        "coefficients": coefficients,
        "grid": { "x_lo": [-x_range], "x_hi": [x_range], "nx": [nx], "nt": nt },
    });
    serde_json::from_value(value).expect("builtin config is well formed")
}

fn registry() -> Vec<BenchmarkEntry> {
    let degenerate = || serde_json::json!([[[0.0]], [[1.0]]]);
    let none = || serde_json::json!({ "type": "finite", "points": [[0.0]] });
    vec![
        BenchmarkEntry {
            name: "DRIFT-LINEAR",
            description: "controlled drift b = v in [-1, 1], unit volatility uncertainty, linear payoff",
            closed_form_text: "V(t,x) = x - (T - t)",
            closed_form: drift_linear,
            tolerance: 1e-2,
            provenance: "V_x = 1 and V_xx = 0, so the HJB reduces to V_t + min_v v = 0",
            config: config(
                "DRIFT-LINEAR",
                degenerate(),
                serde_json::json!({ "type": "box", "lo": [-1.0], "hi": [1.0], "counts": [21] }),
                serde_json::json!({ "b": ["v1"], "sigma": [["1"]], "f": "0", "phi": "x1" }),
                12.0,
                481,
                50,
            ),
        },
        BenchmarkEntry {
            name: "DEGEN-VOL",
            description: "controlled volatility sigma = v in [1, 2] with degenerate uncertainty, concave payoff",
            closed_form_text: "V(t,x) = -x^2",
            closed_form: minus_square,
            tolerance: 2e-2,
            provenance: "F = -2 v^2 <= 0 and the lower variance is 0, so G(F) = 0 and V is constant in time",
            config: config(
                "DEGEN-VOL",
                degenerate(),
                serde_json::json!({ "type": "box", "lo": [1.0], "hi": [2.0], "counts": [11] }),
                serde_json::json!({ "b": ["0"], "sigma": [["v1"]], "f": "0", "phi": "0-x1^2" }),
                12.0,
                481,
                50,
            ),
        },
        BenchmarkEntry {
            name: "RUNCOST",
            description: "controlled drift with quadratic running cost f = v^2",
            closed_form_text: "V(t,x) = x - (T - t)/4",
            closed_form: runcost,
            tolerance: 1e-2,
            provenance: "min_v (v + v^2) = -1/4 at v = -1/2",
            config: config(
                "RUNCOST",
                degenerate(),
                serde_json::json!({ "type": "box", "lo": [-1.0], "hi": [1.0], "counts": [41] }),
                serde_json::json!({ "b": ["v1"], "sigma": [["1"]], "f": "v1^2", "phi": "x1" }),
                12.0,
                481,
                50,
            ),
        },
        BenchmarkEntry {
            name: "QV-COST",
            description: "running cost paid on the quadratic variation, g11 = 1",
            closed_form_text: "V(t,x) = T - t",
            closed_form: qv_cost,
            tolerance: 1e-3,
            provenance: "F = 2 g11 = 2, so V_t + G(2) = V_t + 1 = 0",
            config: config(
                "QV-COST",
                degenerate(),
                none(),
                serde_json::json!({ "b": ["0"], "sigma": [["0"]], "f": "0", "phi": "0", "g": { "11": "1" } }),
                12.0,
                241,
                10,
            ),
        },
        BenchmarkEntry {
            name: "GHEAT-CONVEX",
            description: "sublinear expectation of the convex payoff B^+ (upper volatility is active)",
            closed_form_text: "V(t,x) = x N(x/s) + s phi(x/s), s = sqrt(T - t)",
            closed_form: gheat_convex,
            tolerance: 5e-3,
            provenance: "V is convex in x, so G(V_xx) = V_xx / 2 and V solves the heat equation with unit variance",
            config: config(
                "GHEAT-CONVEX",
                degenerate(),
                none(),
                serde_json::json!({ "b": ["0"], "sigma": [["1"]], "f": "0", "phi": "pos(x1)" }),
                12.0,
                481,
                50,
            ),
        },
        BenchmarkEntry {
            name: "DEGEN-GHEAT",
            description: "sublinear expectation of the concave payoff -B^2 (lower volatility 0 is active)",
            closed_form_text: "V(t,x) = -x^2",
            closed_form: minus_square,
            tolerance: 2e-2,
            provenance: "V_xx = -2 < 0 and the lower variance is 0, so G(V_xx) = 0",
            config: config(
                "DEGEN-GHEAT",
                degenerate(),
                none(),
                serde_json::json!({ "b": ["0"], "sigma": [["1"]], "f": "0", "phi": "0-x1^2" }),
                12.0,
                481,
                50,
            ),
        },
    ]
}

/// All builtins, in a fixed order. Each entry passes its HJB self-check.
pub fn list_builtins() -> Vec<BenchmarkEntry> {
    let entries = registry();
    for e in &entries {
        let r = e
            .hjb_residual(SELF_CHECK_SAMPLES, 0x5eed)
            .unwrap_or_else(|err| panic!("builtin {} failed to evaluate: {err}", e.name));
        assert!(
            r <= SELF_CHECK_TOLERANCE,
            "builtin {} closed form has HJB residual {r:e}",
            e.name
        );
    }
    entries
}

/// Finds a builtin by name (case-insensitive). Unknown names report the
/// closest known name.
pub fn lookup(name: &str) -> Result<BenchmarkEntry> {
    let entries = list_builtins();
    if let Some(e) = entries.iter().find(|e| e.name.eq_ignore_ascii_case(name)) {
        return Ok(e.clone());
    }
    let upper = name.to_ascii_uppercase();
    let suggestion = entries
        .iter()
        .map(|e| (strsim::levenshtein(&upper, e.name), e.name))
        .min()
        .filter(|(dist, _)| *dist <= 4)
        .map(|(_, n)| n.to_string());
    Err(Error::UnknownBuiltin {
        name: name.into(),
        suggestion,
    })
}
