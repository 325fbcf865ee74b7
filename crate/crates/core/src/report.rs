//! Regularity, moment and dynamic-programming check suites, with JSON
//! reports.

use serde::Serialize;

use crate::bench::BenchmarkEntry;
use crate::dpp::{bellman_backward, consistency_from};
use crate::error::{Error, Result};
use crate::grid::ValueField;
use crate::gsde::moment_check;
use crate::hjb::solve_hjb;
use crate::problem::LoadedProblem;

/// Largest normalized increments of a value field over its central region.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RegularityRatios {
    /// `max |V(t,x) − V(t,x′)| / ((1 + |x| + |x′|) |x − x′|)`
    pub space: f64,
    /// `max |V(t,x) − V(t+δ,x)| / ((1 + |x|²) √δ)`
    pub time: f64,
}

/// Space ratios use node pairs along each axis at strides 1, 2, 4, …; time
/// ratios use layer pairs at strides 1, 2, 4, ….
pub fn regularity_ratios(v: &ValueField) -> RegularityRatios {
    let g = &v.grid;
    let central = g.central_nodes();
    let nodes = g.nodes();
    let norm = |x: &[f64]| x.iter().map(|c| c * c).sum::<f64>().sqrt();
    let mut space: f64 = 0.0;
    for layer in &v.layers {
        for &i in &central {
            let idx = g.multi_index(i);
            for k in 0..g.dim() {
                let mut stride = 1;
                while idx[k] + stride < g.nx[k] {
                    let j = i + stride * g.stride(k);
                    if !g.is_central(j) {
                        break;
                    }
                    let (x, y) = (&nodes[i], &nodes[j]);
                    let dist = (g.coord(k, idx[k] + stride) - g.coord(k, idx[k])).abs();
                    let r = (layer[i] - layer[j]).abs() / ((1.0 + norm(x) + norm(y)) * dist);
                    space = space.max(r);
                    stride *= 2;
                }
            }
        }
    }
    let mut time: f64 = 0.0;
    let nl = v.layers.len();
    for a in 0..nl {
        let mut stride = 1;
        while a + stride < nl {
            let b = a + stride;
            let delta = (v.times[b] - v.times[a]).abs();
            for &i in &central {
                let r2 = norm(&nodes[i]).powi(2);
                let r = (v.layers[a][i] - v.layers[b][i]).abs() / ((1.0 + r2) * delta.sqrt());
                time = time.max(r);
            }
            stride *= 2;
        }
    }
    RegularityRatios { space, time }
}

/// Allowed relative growth of a ratio under one refinement.
pub const MAX_GROWTH: f64 = 0.5;

/// Ratios below this are treated as zero when judging growth.
pub const NEGLIGIBLE_RATIO: f64 = 1e-8;

#[derive(Debug, Clone, Serialize)]
pub struct RegularityReport {
    pub coarse: RegularityRatios,
    pub fine: RegularityRatios,
    pub space_stable: bool,
    pub time_stable: bool,
}

fn stable(coarse: f64, fine: f64) -> bool {
    fine <= (1.0 + MAX_GROWTH) * coarse + NEGLIGIBLE_RATIO
}

/// Compares the ratios of the same solution on a grid and its refinement.
pub fn regularity_report(coarse: &ValueField, fine: &ValueField) -> RegularityReport {
    let c = regularity_ratios(coarse);
    let f = regularity_ratios(fine);
    RegularityReport {
        coarse: c,
        fine: f,
        space_stable: stable(c.space, f.space),
        time_stable: stable(c.time, f.time),
    }
}

/// Which checks to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Regularity,
    Moments,
    Dpp,
    All,
}

impl std::str::FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regularity" => Ok(Suite::Regularity),
            "moments" => Ok(Suite::Moments),
            "dpp" => Ok(Suite::Dpp),
            "all" => Ok(Suite::All),
            other => Err(Error::Config(format!(
                "unknown suite `{other}` (expected regularity, moments, dpp or all)"
            ))),
        }
    }
}

/// One measured quantity and the bound it must respect.
#[derive(Debug, Clone, Serialize)]
pub struct CheckItem {
    pub name: String,
    pub measured: Option<f64>,
    pub bound: f64,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub problem: String,
    pub suite: Suite,
    pub passed: bool,
    pub checks: Vec<CheckItem>,
}

/// Agreement bound between the two solvers at matched resolution.
pub const CROSS_SOLVER_TOLERANCE: f64 = 5e-2;
/// Tolerance used for problems without a registered closed form.
pub const DEFAULT_TOLERANCE: f64 = 2e-2;
/// Points of the central lattice on which closed forms are compared.
pub const LATTICE_POINTS: usize = 101;

#[derive(Debug, Clone)]
pub struct CheckOptions<'a> {
    pub suite: Suite,
    pub seed: u64,
    pub benchmark: Option<&'a BenchmarkEntry>,
    pub moment_paths: usize,
}

impl Default for CheckOptions<'_> {
    fn default() -> Self {
        Self {
            suite: Suite::All,
            seed: 0,
            benchmark: None,
            moment_paths: 2000,
        }
    }
}

/// Sup of `|V(0, x) − exact(0, x)|` over a lattice of [`LATTICE_POINTS`]
/// points per axis spanning the central region.
pub fn lattice_error(v: &ValueField, exact: impl Fn(f64, &[f64]) -> f64) -> f64 {
    let g = &v.grid;
    let (lo, hi) = g.central_box();
    let per_axis: Vec<Vec<f64>> = (0..g.dim())
        .map(|k| {
            (0..LATTICE_POINTS)
                .map(|i| lo[k] + (hi[k] - lo[k]) * i as f64 / (LATTICE_POINTS - 1) as f64)
                .collect()
        })
        .collect();
    let mut points: Vec<Vec<f64>> = vec![Vec::new()];
    for axis in &per_axis {
        points = points
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&c| {
                    let mut q = p.clone();
                    q.push(c);
                    q
                })
            })
            .collect();
    }
    points
        .iter()
        .map(|x| (v.at_layer(0, x) - exact(0.0, x)).abs())
        .fold(0.0, f64::max)
}

/// Sup over central nodes of `|a(0) − b(0)|` for fields on the same grid.
pub fn central_gap(a: &ValueField, b: &ValueField) -> f64 {
    a.grid
        .central_nodes()
        .into_iter()
        .map(|i| (a.layers[0][i] - b.layers[0][i]).abs())
        .fold(0.0, f64::max)
}

fn item(name: &str, measured: f64, bound: f64, detail: String) -> CheckItem {
    CheckItem {
        name: name.into(),
        measured: Some(measured),
        bound,
        passed: measured.is_finite() && measured <= bound,
        detail,
    }
}

/// Runs the selected checks on a loaded problem. Solver failures are
/// returned as errors; failed checks are recorded in the report.
pub fn run_check_suite(lp: &LoadedProblem, opts: &CheckOptions<'_>) -> Result<CheckReport> {
    let controls = lp.problem.controls()?;
    let tolerance = opts.benchmark.map_or(DEFAULT_TOLERANCE, |b| b.tolerance);
    let mut checks = Vec::new();
    let run = |s: Suite| opts.suite == s || opts.suite == Suite::All;

    if run(Suite::Regularity) {
        let coarse = solve_hjb(lp, &lp.grid, &controls)?;
        let fine = solve_hjb(lp, &lp.grid.refined(), &controls)?;
        let rep = regularity_report(&coarse, &fine);
        for (name, c, f) in [
            ("regularity.space_ratio_growth", rep.coarse.space, rep.fine.space),
            ("regularity.time_ratio_growth", rep.coarse.time, rep.fine.time),
        ] {
            let growth = if c > NEGLIGIBLE_RATIO { f / c - 1.0 } else if f > NEGLIGIBLE_RATIO { f64::INFINITY } else { 0.0 };
            checks.push(CheckItem {
                name: name.into(),
                measured: growth.is_finite().then_some(growth),
                bound: MAX_GROWTH,
                passed: stable(c, f),
                detail: format!("coarse ratio {c:.6e}, refined ratio {f:.6e}"),
            });
        }
    }

    if run(Suite::Moments) {
        let (lo, hi) = lp.grid.central_box();
        let x0: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| 0.5 * (l + h)).collect();
        let t = lp.problem.horizon;
        let deltas = [0.4 * t, 0.2 * t, 0.1 * t, 0.05 * t];
        let rep = moment_check(lp, &x0, &deltas, opts.moment_paths, 20, opts.seed)?;
        let detail = format!("estimates {:?} at deltas {:?}", rep.estimates, rep.deltas);
        checks.push(match rep.slope {
            Some(s) => CheckItem {
                name: "moments.log_log_slope".into(),
                measured: Some(s),
                bound: 0.8,
                passed: s.is_finite() && s >= 0.8,
                detail,
            },
            None => CheckItem {
                name: "moments.log_log_slope".into(),
                measured: None,
                bound: 0.8,
                passed: true,
                detail: "all moment estimates are zero (no motion)".into(),
            },
        });
        let cmax = rep.bound_constants.iter().cloned().fold(0.0, f64::max);
        checks.push(CheckItem {
            name: "moments.bound_constant".into(),
            measured: Some(cmax),
            bound: f64::MAX,
            passed: rep.bound_constants.iter().all(|c| c.is_finite()),
            detail: format!("C estimates {:?}", rep.bound_constants),
        });
    }

    if run(Suite::Dpp) {
        let (vd, _) = bellman_backward(lp, &lp.grid, &controls)?;
        let vh = solve_hjb(lp, &lp.grid, &controls)?;
        if let Some(b) = opts.benchmark {
            let e = lattice_error(&vd, b.closed_form);
            checks.push(item("dpp.closed_form_error", e, b.tolerance, format!("closed form {}", b.closed_form_text)));
            let e = lattice_error(&vh, b.closed_form);
            checks.push(item("hjb.closed_form_error", e, b.tolerance, format!("closed form {}", b.closed_form_text)));
        }
        let dt = lp.problem.horizon / lp.grid.nt as f64;
        let delta = (0.5 * lp.grid.nt as f64).round().max(1.0) * dt;
        let rep = consistency_from(lp, &lp.grid, &controls, &vd, 0.0, delta)?;
        let bound = tolerance.max(rep.interpolation_bound);
        checks.push(item(
            "dpp.consistency_residual",
            rep.residual,
            bound,
            format!("delta {delta}, interpolation bound {:.3e}", rep.interpolation_bound),
        ));
        checks.push(item(
            "dpp.hjb_agreement",
            central_gap(&vd, &vh),
            CROSS_SOLVER_TOLERANCE,
            "sup over central nodes of |V_hjb(0) - V_dpp(0)|".into(),
        ));
    }

    Ok(CheckReport {
        problem: lp.problem.name.clone(),
        suite: opts.suite,
        passed: checks.iter().all(|c| c.passed),
        checks,
    })
}

/// JSON body written when a command fails before producing results.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorReport {
    pub error: ErrorBody,
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorBody {
    pub category: String,
    pub kind: String,
    pub message: String,
}

impl ErrorReport {
    pub fn from_error(e: &Error) -> Self {
        let debug = format!("{e:?}");
        let kind = debug
            .split(|c: char| !c.is_alphanumeric())
            .next()
            .unwrap_or("Error")
            .to_string();
        Self {
            error: ErrorBody {
                category: format!("{:?}", e.category()).to_lowercase(),
                kind,
                message: e.to_string(),
            },
        }
    }
}

/// CSV rows `t,x1[,x2],value` for every stored time and node.
pub fn write_value_csv(v: &ValueField, out: &mut impl std::io::Write) -> std::io::Result<()> {
    let n = v.grid.dim();
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|k| format!("x{k}")));
    header.push("value".into());
    writeln!(out, "{}", header.join(","))?;
    let nodes = v.grid.nodes();
    for (t, layer) in v.times.iter().zip(&v.layers) {
        for (x, val) in nodes.iter().zip(layer) {
            let mut row = vec![format!("{t:?}")];
            row.extend(x.iter().map(|c| format!("{c:?}")));
            row.push(format!("{val:?}"));
            writeln!(out, "{}", row.join(","))?;
        }
    }
    Ok(())
}
