//! Monte Carlo simulation of the controlled SDE under explicit volatility
//! scenarios.
//!
//! A scenario is a [`VolatilitySchedule`]: one vertex `γ` of the ambiguity
//! set per Euler step. Under it the canonical process moves by
//! `ΔB = √γ ξ √Δt`, its quadratic variation by `Δ⟨B⟩ = γ Δt`, and the state by
//!
//! ```text
//! ΔX = (b + Σ_ij h_ij γ_ij) Δt + σ √γ ξ √Δt
//! ```
//!
//! Sublinear expectations are approximated from below by maximizing plain
//! Monte Carlo means over a finite family of schedules.
//!
//! Every path draws from its own ChaCha stream (`seed`, stream = path index),
//! so results do not depend on the thread count. Means are reduced by a
//! fixed pairwise summation.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::dpp::PolicyField;
use crate::error::{Error, Result};
use crate::problem::expr::Expr;
use crate::problem::{vertex_roots, LoadedProblem};

/// One vertex index per Euler step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VolatilitySchedule {
    pub vertex_index: Vec<usize>,
}

impl VolatilitySchedule {
    pub fn constant(vertex: usize, steps: usize) -> Self {
        Self {
            vertex_index: vec![vertex; steps],
        }
    }

    pub fn step_count(&self) -> usize {
        self.vertex_index.len()
    }

    fn validate(&self, steps: usize, vertices: usize) -> Result<()> {
        if self.step_count() != steps {
            return Err(Error::DimensionMismatch {
                what: "volatility schedule length".into(),
                expected: steps,
                got: self.step_count(),
            });
        }
        if let Some(&bad) = self.vertex_index.iter().find(|&&k| k >= vertices) {
            return Err(Error::Config(format!(
                "schedule refers to vertex {bad}, but the ambiguity set has {vertices}"
            )));
        }
        Ok(())
    }
}

/// All constant schedules followed by `k − vertices` random switching
/// schedules with one to four switches each.
pub fn schedule_family(vertices: usize, steps: usize, k: usize, seed: u64) -> Vec<VolatilitySchedule> {
    let mut out: Vec<VolatilitySchedule> = (0..vertices)
        .map(|v| VolatilitySchedule::constant(v, steps))
        .collect();
    if vertices < 2 || steps < 2 {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while out.len() < k {
        let switches = rng.random_range(1..=4usize.min(steps - 1));
        let mut cuts: Vec<usize> = Vec::with_capacity(switches);
        while cuts.len() < switches {
            let c = rng.random_range(1..steps);
            if !cuts.contains(&c) {
                cuts.push(c);
            }
        }
        cuts.sort_unstable();
        let mut current = rng.random_range(0..vertices);
        let mut sched = Vec::with_capacity(steps);
        let mut next_cut = 0;
        for s in 0..steps {
            if next_cut < cuts.len() && cuts[next_cut] == s {
                let shift = rng.random_range(1..vertices);
                current = (current + shift) % vertices;
                next_cut += 1;
            }
            sched.push(current);
        }
        out.push(VolatilitySchedule { vertex_index: sched });
    }
    out
}

/// Open-loop schedule that follows the worst-case vertex of a DPP policy at
/// the node nearest `x0`.
pub fn policy_schedule(policy: &PolicyField, t0: f64, horizon: f64, x0: &[f64], steps: usize) -> VolatilitySchedule {
    let dt = (horizon - t0) / steps as f64;
    VolatilitySchedule {
        vertex_index: (0..steps)
            .map(|k| policy.vertex_at(t0 + k as f64 * dt, x0))
            .collect(),
    }
}

/// How the control is chosen along a path.
#[derive(Debug, Clone, Copy)]
pub enum ControlSource<'a> {
    /// The same control at every step.
    Constant(&'a [f64]),
    /// One control per step.
    OpenLoop(&'a [Vec<f64>]),
    /// Feedback from a DPP policy, interpolated at `(t, X_t)`.
    Policy(&'a PolicyField),
    /// Feedback expressions in `t` and `x`, one per control component.
    Feedback(&'a [Expr]),
}

impl ControlSource<'_> {
    fn control(&self, step: usize, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            ControlSource::Constant(v) => Ok(v.to_vec()),
            ControlSource::OpenLoop(seq) => Ok(seq[step].clone()),
            ControlSource::Policy(p) => Ok(p.control_at(t, x)),
            ControlSource::Feedback(exprs) => exprs
                .iter()
                .enumerate()
                .map(|(k, e)| {
                    e.eval(t, x, &[])
                        .map_err(|err| Error::coefficient(format!("control[{k}]"), err))
                })
                .collect(),
        }
    }

    fn validate(&self, m: usize, steps: usize) -> Result<()> {
        let dim = |got: usize| {
            if got == m {
                Ok(())
            } else {
                Err(Error::DimensionMismatch {
                    what: "control".into(),
                    expected: m,
                    got,
                })
            }
        };
        match self {
            ControlSource::Constant(v) => dim(v.len()),
            ControlSource::OpenLoop(seq) => {
                if seq.len() != steps {
                    return Err(Error::DimensionMismatch {
                        what: "open-loop control length".into(),
                        expected: steps,
                        got: seq.len(),
                    });
                }
                seq.iter().try_for_each(|v| dim(v.len()))
            }
            ControlSource::Policy(p) => dim(p.controls[0].len()),
            ControlSource::Feedback(e) => dim(e.len()),
        }
    }
}

/// Where and how long to simulate.
#[derive(Debug, Clone)]
pub struct SimulationSpec {
    pub t0: f64,
    pub x0: Vec<f64>,
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
}

/// Simulated trajectories, flattened row-major as `[path][step][component]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle {
    pub times: Vec<f64>,
    pub n: usize,
    pub d: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub x: Vec<f64>,
    pub b: Vec<f64>,
    /// `d × d` quadratic variation, row-major per step.
    pub qv: Vec<f64>,
    /// Realized cost `Φ(X_T) + ∫ f ds + Σ_ij ∫ g_ij d⟨B^i, B^j⟩` per path.
    pub cost: Vec<f64>,
}

impl PathBundle {
    fn points(&self) -> usize {
        self.times.len()
    }

    pub fn x_at(&self, path: usize, step: usize) -> &[f64] {
        let o = (path * self.points() + step) * self.n;
        &self.x[o..o + self.n]
    }

    pub fn b_at(&self, path: usize, step: usize) -> &[f64] {
        let o = (path * self.points() + step) * self.d;
        &self.b[o..o + self.d]
    }

    pub fn qv_at(&self, path: usize, step: usize) -> DMatrix<f64> {
        let dd = self.d * self.d;
        let o = (path * self.points() + step) * dd;
        DMatrix::from_row_slice(self.d, self.d, &self.qv[o..o + dd])
    }

    /// CSV with columns `path,t,x1..xn,B1..Bd,qv11..qvdd`.
    pub fn write_csv(&self, out: &mut impl std::io::Write) -> std::io::Result<()> {
        let mut header = vec!["path".to_string(), "t".to_string()];
        header.extend((1..=self.n).map(|k| format!("x{k}")));
        header.extend((1..=self.d).map(|k| format!("B{k}")));
        for i in 1..=self.d {
            for j in 1..=self.d {
                header.push(format!("qv{i}{j}"));
            }
        }
        writeln!(out, "{}", header.join(","))?;
        for p in 0..self.n_paths {
            for (k, t) in self.times.iter().enumerate() {
                let mut row = vec![p.to_string(), format!("{t:?}")];
                row.extend(self.x_at(p, k).iter().map(|v| format!("{v:?}")));
                row.extend(self.b_at(p, k).iter().map(|v| format!("{v:?}")));
                row.extend(self.qv_at(p, k).transpose().iter().map(|v| format!("{v:?}")));
                writeln!(out, "{}", row.join(","))?;
            }
        }
        Ok(())
    }
}

/// Per-path summary used by the estimators.
struct PathOutcome {
    cost: f64,
    sup_sq_dev: f64,
}

struct Simulator<'a> {
    lp: &'a LoadedProblem,
    roots: Vec<DMatrix<f64>>,
    control: ControlSource<'a>,
    schedule: &'a VolatilitySchedule,
    t0: f64,
    dt: f64,
    x0: &'a [f64],
    seed: u64,
}

#[derive(Default)]
struct Recorder {
    x: Vec<f64>,
    b: Vec<f64>,
    qv: Vec<f64>,
}

impl Simulator<'_> {
    fn run(&self, path: usize, mut rec: Option<&mut Recorder>) -> Result<PathOutcome> {
        let (n, d) = (self.lp.problem.n, self.lp.problem.d);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(path as u64);
        let sq = self.dt.sqrt();
        let mut x = self.x0.to_vec();
        let mut b = vec![0.0; d];
        let mut qv = DMatrix::<f64>::zeros(d, d);
        let mut running = 0.0;
        let mut sup_sq_dev: f64 = 0.0;
        if let Some(r) = rec.as_deref_mut() {
            r.x.extend_from_slice(&x);
            r.b.extend_from_slice(&b);
            r.qv.extend(qv.transpose().iter());
        }
        let mut xi = DVector::<f64>::zeros(d);
        for (k, &vertex) in self.schedule.vertex_index.iter().enumerate() {
            let t = self.t0 + k as f64 * self.dt;
            let v = self.control.control(k, t, &x)?;
            let c = self.lp.problem.coefficients(t, &x, &v)?;
            let gamma = self.lp.ambiguity.vertex(vertex);
            let frozen = c.freeze(gamma);
            for z in xi.iter_mut() {
                *z = rng.sample(StandardNormal);
            }
            let db = &self.roots[vertex] * &xi * sq;
            let dx = &c.sigma * &db;
            running += frozen.cost * self.dt;
            for r in 0..n {
                x[r] += frozen.drift[r] * self.dt + dx[r];
            }
            for r in 0..d {
                b[r] += db[r];
            }
            qv += gamma * self.dt;
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    step: k + 1,
                    context: Some(format!("path {path}")),
                });
            }
            let dev: f64 = x.iter().zip(self.x0).map(|(a, b)| (a - b) * (a - b)).sum();
            sup_sq_dev = sup_sq_dev.max(dev);
            if let Some(r) = rec.as_deref_mut() {
                r.x.extend_from_slice(&x);
                r.b.extend_from_slice(&b);
                r.qv.extend(qv.transpose().iter());
            }
        }
        let terminal = self.lp.problem.terminal(&x)?;
        Ok(PathOutcome {
            cost: terminal + running,
            sup_sq_dev,
        })
    }

    fn outcomes(&self, n_paths: usize) -> Result<Vec<PathOutcome>> {
        (0..n_paths)
            .into_par_iter()
            .map(|p| self.run(p, None))
            .collect()
    }
}

fn simulator<'a>(
    lp: &'a LoadedProblem,
    control: ControlSource<'a>,
    schedule: &'a VolatilitySchedule,
    t0: f64,
    t_end: f64,
    x0: &'a [f64],
    seed: u64,
) -> Result<Simulator<'a>> {
    let steps = schedule.step_count();
    if steps == 0 {
        return Err(Error::Config("simulation needs at least one step".into()));
    }
    if !(t_end > t0) {
        return Err(Error::Config(format!("simulation interval [{t0}, {t_end}] is empty")));
    }
    if x0.len() != lp.problem.n {
        return Err(Error::DimensionMismatch {
            what: "x0".into(),
            expected: lp.problem.n,
            got: x0.len(),
        });
    }
    schedule.validate(steps, lp.ambiguity.len())?;
    control.validate(lp.problem.m, steps)?;
    Ok(Simulator {
        lp,
        roots: vertex_roots(&lp.ambiguity),
        control,
        schedule,
        t0,
        dt: (t_end - t0) / steps as f64,
        x0,
        seed,
    })
}

/// Euler–Maruyama paths on `[t0, T]` under one volatility schedule.
pub fn simulate_paths(
    lp: &LoadedProblem,
    control: ControlSource<'_>,
    schedule: &VolatilitySchedule,
    spec: &SimulationSpec,
) -> Result<PathBundle> {
    if schedule.step_count() != spec.n_steps {
        return Err(Error::DimensionMismatch {
            what: "volatility schedule length".into(),
            expected: spec.n_steps,
            got: schedule.step_count(),
        });
    }
    let sim = simulator(lp, control, schedule, spec.t0, lp.problem.horizon, &spec.x0, spec.seed)?;
    let per_path: Vec<(Recorder, f64)> = (0..spec.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rec = Recorder::default();
            let out = sim.run(p, Some(&mut rec))?;
            Ok((rec, out.cost))
        })
        .collect::<Result<_>>()?;
    let mut bundle = PathBundle {
        times: (0..=spec.n_steps).map(|k| spec.t0 + k as f64 * sim.dt).collect(),
        n: lp.problem.n,
        d: lp.problem.d,
        n_paths: spec.n_paths,
        seed: spec.seed,
        x: Vec::new(),
        b: Vec::new(),
        qv: Vec::new(),
        cost: Vec::with_capacity(spec.n_paths),
    };
    for (rec, cost) in per_path {
        bundle.x.extend(rec.x);
        bundle.b.extend(rec.b);
        bundle.qv.extend(rec.qv);
        bundle.cost.push(cost);
    }
    Ok(bundle)
}

/// Sum in a fixed binary-tree order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n if n <= 8 => values.iter().sum(),
        n => {
            let (a, b) = values.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

/// Sample mean and standard error.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = pairwise_sum(values) / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&sq) / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, Serialize)]
pub struct ScheduleEstimate {
    pub mean: f64,
    pub std_error: f64,
}

/// A lower-bound estimate of the cost functional: the largest Monte Carlo
/// mean over a finite schedule family.
#[derive(Debug, Clone, Serialize)]
pub struct ScenarioEstimate {
    pub value: f64,
    pub std_error: f64,
    pub worst_schedule: VolatilitySchedule,
    pub per_schedule: Vec<ScheduleEstimate>,
}

/// Estimates `Ê[Φ(X_T) + ∫ f ds + Σ ∫ g_ij d⟨B^i, B^j⟩]` from `(t0, x0)` as
/// the maximum over `family` of Monte Carlo means. All schedules share the
/// same random numbers. Ties go to the earliest schedule.
pub fn estimate_cost(
    lp: &LoadedProblem,
    t0: f64,
    x0: &[f64],
    control: ControlSource<'_>,
    family: &[VolatilitySchedule],
    n_paths: usize,
    seed: u64,
) -> Result<ScenarioEstimate> {
    if family.is_empty() {
        return Err(Error::Config("schedule family is empty".into()));
    }
    if n_paths == 0 {
        return Err(Error::Config("need at least one path".into()));
    }
    let mut per_schedule: Vec<ScheduleEstimate> = Vec::with_capacity(family.len());
    let mut best = 0;
    for (k, sched) in family.iter().enumerate() {
        let sim = simulator(lp, control, sched, t0, lp.problem.horizon, x0, seed)?;
        let costs: Vec<f64> = sim.outcomes(n_paths)?.into_iter().map(|o| o.cost).collect();
        let (mean, std_error) = mean_and_se(&costs);
        if k > 0 && mean > per_schedule[best].mean {
            best = k;
        }
        per_schedule.push(ScheduleEstimate { mean, std_error });
    }
    Ok(ScenarioEstimate {
        value: per_schedule[best].mean,
        std_error: per_schedule[best].std_error,
        worst_schedule: family[best].clone(),
        per_schedule,
    })
}

/// Moment growth of `Ê[sup_{s ≤ δ} |X_s − x0|²]` in `δ`.
#[derive(Debug, Clone, Serialize)]
pub struct MomentReport {
    pub deltas: Vec<f64>,
    pub estimates: Vec<f64>,
    /// Log-log least-squares slope; `None` when every estimate is zero.
    pub slope: Option<f64>,
    /// `estimate / ((1 + |x0|²) δ)` per δ.
    pub bound_constants: Vec<f64>,
}

/// Estimates the second moment of the running deviation from `x0` over
/// `[0, δ]` for each δ, maximized over constant-vertex schedules, using the
/// first discretized control and `steps_per_delta` Euler steps per interval.
/// All intervals share one random stream, so a pure diffusion scales exactly.
pub fn moment_check(
    lp: &LoadedProblem,
    x0: &[f64],
    deltas: &[f64],
    n_paths: usize,
    steps_per_delta: usize,
    seed: u64,
) -> Result<MomentReport> {
    if deltas.len() < 2 {
        return Err(Error::Config("moment check needs at least two deltas".into()));
    }
    let controls = lp.problem.controls()?;
    let control = ControlSource::Constant(&controls[0]);
    let family: Vec<VolatilitySchedule> = (0..lp.ambiguity.len())
        .map(|v| VolatilitySchedule::constant(v, steps_per_delta))
        .collect();
    let mut estimates = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        if !(delta > 0.0 && delta <= lp.problem.horizon + 1e-12) {
            return Err(Error::Config(format!("moment check delta {delta} is outside (0, T]")));
        }
        let mut best = f64::NEG_INFINITY;
        for sched in &family {
            let sim = simulator(lp, control, sched, 0.0, delta, x0, seed)?;
            let dev: Vec<f64> = sim.outcomes(n_paths)?.into_iter().map(|o| o.sup_sq_dev).collect();
            best = best.max(pairwise_sum(&dev) / n_paths as f64);
        }
        estimates.push(best);
    }
    let r2: f64 = x0.iter().map(|v| v * v).sum();
    let bound_constants = deltas
        .iter()
        .zip(&estimates)
        .map(|(d, e)| e / ((1.0 + r2) * d))
        .collect();
    let slope = if estimates.iter().all(|&e| e == 0.0) {
        None
    } else {
        let pts: Vec<(f64, f64)> = deltas
            .iter()
            .zip(&estimates)
            .map(|(d, e)| (d.ln(), e.max(f64::MIN_POSITIVE).ln()))
            .collect();
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        Some(sxy / sxx)
    };
    Ok(MomentReport {
        deltas: deltas.to_vec(),
        estimates,
        slope,
        bound_constants,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::config::ProblemConfig;

    fn problem(coeffs: serde_json::Value) -> LoadedProblem {
        let cfg = serde_json::json!({
            "name": "sim", "state_dim": 1, "brownian_dim": 1, "control_dim": 1, "horizon": 1.0,
            "ambiguity": { "vertices": [[[0.0]], [[1.0]]] },
            "control_set": { "type": "box", "lo": [-1.0], "hi": [1.0], "counts": [3] },
            "coefficients": coeffs,
            "grid": { "x_lo": [-6.0], "x_hi": [6.0], "nx": [121], "nt": 10 }
        });
        ProblemConfig::from_json(&cfg.to_string()).unwrap().build(false).unwrap()
    }

    fn spec(paths: usize, steps: usize) -> SimulationSpec {
        SimulationSpec {
            t0: 0.0,
            x0: vec![0.0],
            n_paths: paths,
            n_steps: steps,
            seed: 42,
        }
    }

    #[test]
    fn zero_volatility_scenario_is_deterministic() {
        let lp = problem(serde_json::json!({ "b": ["1"], "sigma": [["1"]], "f": "0", "phi": "x1" }));
        let sched = VolatilitySchedule::constant(0, 20);
        let pb = simulate_paths(&lp, ControlSource::Constant(&[0.0]), &sched, &spec(10, 20)).unwrap();
        for p in 0..10 {
            assert!((pb.x_at(p, 20)[0] - 1.0).abs() < 1e-14);
            assert!((0..=20).all(|k| pb.b_at(p, k)[0] == 0.0 && pb.qv_at(p, k)[(0, 0)] == 0.0));
        }
    }

    #[test]
    fn unit_volatility_scaling_and_qv() {
        let lp = problem(serde_json::json!({ "b": ["0"], "sigma": [["1"]], "f": "0", "phi": "x1" }));
        let sched = VolatilitySchedule::constant(1, 10);
        let pb = simulate_paths(&lp, ControlSource::Constant(&[0.0]), &sched, &spec(20_000, 10)).unwrap();
        let xt: Vec<f64> = (0..20_000).map(|p| pb.x_at(p, 10)[0]).collect();
        let (mean, _) = mean_and_se(&xt);
        let sq: Vec<f64> = xt.iter().map(|x| (x - mean).powi(2)).collect();
        let var = pairwise_sum(&sq) / (xt.len() - 1) as f64;
        // SE of a sample variance of normals is about σ²√(2/N)
        assert!((var - 1.0).abs() < 3.0 * (2.0 / 20_000f64).sqrt(), "{var}");
        for p in 0..20_000 {
            assert!((pb.qv_at(p, 10)[(0, 0)] - 1.0).abs() < 1e-12);
        }
        // QV increments are exactly γΔt and nondecreasing
        for k in 1..=10 {
            let inc = pb.qv_at(0, k)[(0, 0)] - pb.qv_at(0, k - 1)[(0, 0)];
            assert!((inc - 0.1).abs() < 1e-15);
        }
    }

    #[test]
    fn control_free_coefficients_ignore_the_control() {
        let lp = problem(serde_json::json!({ "b": ["0.3"], "sigma": [["1"]], "f": "0", "phi": "x1" }));
        let sched = VolatilitySchedule::constant(1, 8);
        let a = simulate_paths(&lp, ControlSource::Constant(&[-1.0]), &sched, &spec(50, 8)).unwrap();
        let b = simulate_paths(&lp, ControlSource::Constant(&[1.0]), &sched, &spec(50, 8)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn determinism_across_thread_counts() {
        let lp = problem(serde_json::json!({ "b": ["v1 - x1"], "sigma": [["1 + 0.2*sin(x1)"]], "f": "x1^2", "phi": "abs(x1)" }));
        let sched = schedule_family(2, 16, 4, 9).pop().unwrap();
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| simulate_paths(&lp, ControlSource::Constant(&[0.5]), &sched, &spec(300, 16)).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn estimate_examples() {
        let family = schedule_family(2, 10, 2, 0);
        let lp = problem(serde_json::json!({ "b": ["0"], "sigma": [["1"]], "f": "0", "phi": "x1^2" }));
        let est = estimate_cost(&lp, 0.0, &[0.0], ControlSource::Constant(&[0.0]), &family, 20_000, 1).unwrap();
        assert!((est.value - 1.0).abs() < 3.0 * est.std_error, "{est:?}");
        assert_eq!(est.worst_schedule, VolatilitySchedule::constant(1, 10));

        let lp = problem(serde_json::json!({ "b": ["0"], "sigma": [["0"]], "f": "0", "phi": "0", "g": { "11": "1" } }));
        let est = estimate_cost(&lp, 0.0, &[0.0], ControlSource::Constant(&[0.0]), &family, 100, 1).unwrap();
        assert!((est.value - 1.0).abs() < 1e-12);
        assert_eq!(est.worst_schedule, VolatilitySchedule::constant(1, 10));

        let lp = problem(serde_json::json!({ "b": ["0"], "sigma": [["0"]], "f": "0", "phi": "x1" }));
        let est = estimate_cost(&lp, 0.0, &[0.7], ControlSource::Constant(&[0.0]), &family, 100, 1).unwrap();
        assert_eq!((est.value, est.std_error), (0.7, 0.0));
    }

    #[test]
    fn enlarging_the_family_never_decreases_the_estimate() {
        let lp = problem(serde_json::json!({ "b": ["v1"], "sigma": [["1"]], "f": "0", "phi": "sin(x1) + 0.5*abs(x1)" }));
        let family = schedule_family(2, 12, 8, 5);
        let mut last = f64::NEG_INFINITY;
        for k in 1..=family.len() {
            let est = estimate_cost(&lp, 0.0, &[0.2], ControlSource::Constant(&[0.5]), &family[..k], 500, 3).unwrap();
            assert!(est.value >= last);
            last = est.value;
        }
    }

    #[test]
    fn moment_slopes() {
        let lp = problem(serde_json::json!({ "b": ["0"], "sigma": [["1"]], "f": "0", "phi": "x1" }));
        let deltas = [0.4, 0.2, 0.1, 0.05];
        let rep = moment_check(&lp, &[0.0], &deltas, 2000, 20, 7).unwrap();
        assert!((rep.slope.unwrap() - 1.0).abs() < 0.2, "{rep:?}");
        assert!(rep.bound_constants.iter().all(|c| c.is_finite() && *c > 0.0));

        let lp = problem(serde_json::json!({ "b": ["1"], "sigma": [["0"]], "f": "0", "phi": "x1" }));
        let rep = moment_check(&lp, &[0.0], &deltas, 10, 20, 7).unwrap();
        assert!((rep.slope.unwrap() - 2.0).abs() < 0.1, "{rep:?}");

        let lp = problem(serde_json::json!({ "b": ["0"], "sigma": [["0"]], "f": "0", "phi": "x1" }));
        assert_eq!(moment_check(&lp, &[0.0], &deltas, 10, 20, 7).unwrap().slope, None);
    }

    #[test]
    fn schedule_family_shape() {
        let fam = schedule_family(3, 10, 7, 1);
        assert_eq!(fam.len(), 7);
        for (v, s) in fam.iter().take(3).enumerate() {
            assert_eq!(s, &VolatilitySchedule::constant(v, 10));
        }
        for s in &fam[3..] {
            let switches = s.vertex_index.windows(2).filter(|w| w[0] != w[1]).count();
            assert!((1..=4).contains(&switches));
        }
        assert_eq!(schedule_family(3, 10, 7, 1), fam);
    }

    #[test]
    fn pairwise_sum_is_exact_on_integers() {
        let v: Vec<f64> = (1..=1000).map(f64::from).collect();
        assert_eq!(pairwise_sum(&v), 500_500.0);
    }
}
