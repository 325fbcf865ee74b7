//! End-to-end acceptance criteria. Prints one PASS/FAIL line per criterion
//! and exits with status 1 if any criterion fails.

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use gctl::bench::{list_builtins, lookup, BenchmarkEntry};
use gctl::dpp::{bellman_backward, dpp_consistency_check, PolicyField};
use gctl::gheat::g_expectation;
use gctl::gsde::{estimate_cost, mean_and_se, moment_check, policy_schedule, ControlSource, VolatilitySchedule};
use gctl::hjb::solve_hjb;
use gctl::problem::config::ProblemConfig;
use gctl::problem::expr::parse_expr;
use gctl::report::{central_gap, lattice_error, run_check_suite, CheckOptions, Suite};
use gctl::{AmbiguitySet, ExprError, GridSpec, LoadedProblem, ValueField};

type Outcome = (bool, String);
type Criterion = (&'static str, fn() -> Outcome);

fn within(value: f64, target: f64, tol: f64) -> bool {
    (value - target).abs() <= tol
}

fn solve_both(b: &BenchmarkEntry) -> (LoadedProblem, ValueField, PolicyField, ValueField) {
    let lp = b.load().unwrap();
    let controls = lp.problem.controls().unwrap();
    let (vd, policy) = bellman_backward(&lp, &lp.grid, &controls).unwrap();
    let vh = solve_hjb(&lp, &lp.grid, &controls).unwrap();
    (lp, vd, policy, vh)
}

/// Largest deviation of the stored control from `target` over central
/// nodes and all decision times.
fn policy_deviation(policy: &PolicyField, target: f64) -> f64 {
    let central = policy.grid.central_nodes();
    policy
        .control_index
        .iter()
        .flat_map(|layer| central.iter().map(move |&i| (policy.controls[layer[i]][0] - target).abs()))
        .fold(0.0, f64::max)
}

fn custom(coefficients: serde_json::Value) -> LoadedProblem {
    let cfg: ProblemConfig = serde_json::from_value(serde_json::json!({
        "name": "moment-probe",
        "state_dim": 1, "brownian_dim": 1, "control_dim": 1, "horizon": 1.0,
        "ambiguity": { "vertices": [[[0.0]], [[1.0]]] },
        "control_set": { "type": "finite", "points": [[0.0]] },
        "coefficients": coefficients,
        "grid": { "x_lo": [-6.0], "x_hi": [6.0], "nx": [121], "nt": 10 },
    }))
    .unwrap();
    cfg.build(false).unwrap()
}

fn degenerate_heat() -> Outcome {
    let s = AmbiguitySet::scalar(&[0.0, 1.0]).unwrap();
    let grid = GridSpec::uniform_1d(-6.0, 6.0, 0.01, 10).unwrap();
    let down = g_expectation(&s, &parse_expr("0-x1^2", 1, 0).unwrap(), 1.0, &grid).unwrap();
    let up = g_expectation(&s, &parse_expr("x1^2", 1, 0).unwrap(), 1.0, &grid).unwrap();
    (
        within(down, 0.0, 2e-2) && within(up, 1.0, 2e-2),
        format!("E[-B1^2] = {down:.6}, E[B1^2] = {up:.6}"),
    )
}

fn convex_payoff() -> Outcome {
    let exact = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let samples: Vec<f64> = (0..1_000_000)
        .map(|_| rng.sample::<f64, _>(StandardNormal).max(0.0))
        .collect();
    let (mc, se) = mean_and_se(&samples);
    let grid = GridSpec::uniform_1d(-6.0, 6.0, 0.02, 10).unwrap();
    let phi = parse_expr("pos(x1)", 1, 0).unwrap();
    let mut ok = within(mc, exact, 4.0 * se);
    let mut values = Vec::new();
    for low in [0.0, 0.25, 0.5] {
        let s = AmbiguitySet::scalar(&[low, 1.0]).unwrap();
        let u = g_expectation(&s, &phi, 1.0, &grid).unwrap();
        ok &= within(u, mc, 5e-3) && within(u, exact, 5e-3);
        values.push(u);
    }
    (ok, format!("MC oracle {mc:.5} (SE {se:.1e}); solver {values:.5?} for lower variance 0, 0.25, 0.5"))
}

fn drift_linear() -> Outcome {
    let b = lookup("DRIFT-LINEAR").unwrap();
    let (_, vd, policy, vh) = solve_both(&b);
    let ed = lattice_error(&vd, b.closed_form);
    let eh = lattice_error(&vh, b.closed_form);
    let dev = policy_deviation(&policy, -1.0);
    (
        ed <= 1e-2 && eh <= 1e-2 && dev == 0.0,
        format!("sup-error dpp {ed:.2e}, hjb {eh:.2e}; policy deviation from -1: {dev}"),
    )
}

fn degen_vol() -> Outcome {
    let b = lookup("DEGEN-VOL").unwrap();
    let (_, vd, _, vh) = solve_both(&b);
    let ed = lattice_error(&vd, b.closed_form);
    let eh = lattice_error(&vh, b.closed_form);
    let central = vh.grid.central_nodes();
    let drift = vh
        .layers
        .iter()
        .flat_map(|layer| central.iter().map(|&i| (layer[i] - vh.last()[i]).abs()))
        .fold(0.0, f64::max);
    (
        ed <= 2e-2 && eh <= 2e-2 && drift <= 2e-2,
        format!("sup-error dpp {ed:.2e}, hjb {eh:.2e}; max |V(t,x) - V(T,x)| = {drift:.2e}"),
    )
}

fn runcost() -> Outcome {
    let b = lookup("RUNCOST").unwrap();
    let (_, vd, policy, vh) = solve_both(&b);
    let d0 = vd.at_layer(0, &[0.0]);
    let h0 = vh.at_layer(0, &[0.0]);
    let spacing = policy.controls[1][0] - policy.controls[0][0];
    let dev = policy_deviation(&policy, -0.5);
    (
        within(d0, -0.25, 1e-2) && within(h0, -0.25, 1e-2) && dev <= spacing + 1e-12,
        format!("V(0,0) dpp {d0:.6}, hjb {h0:.6}; policy deviation from -0.5: {dev:.3} (spacing {spacing:.3})"),
    )
}

fn qv_cost() -> Outcome {
    let b = lookup("QV-COST").unwrap();
    let (_, vd, _, vh) = solve_both(&b);
    let ed = lattice_error(&vd, b.closed_form);
    let eh = lattice_error(&vh, b.closed_form);
    let spread = |v: &ValueField| {
        let c = v.grid.central_nodes();
        let vals: Vec<f64> = c.iter().map(|&i| v.layers[0][i]).collect();
        vals.iter().cloned().fold(f64::MIN, f64::max) - vals.iter().cloned().fold(f64::MAX, f64::min)
    };
    let (sd, sh) = (spread(&vd), spread(&vh));
    (
        ed <= 1e-3 && eh <= 1e-3 && sd <= 1e-3 && sh <= 1e-3,
        format!("sup-error dpp {ed:.2e}, hjb {eh:.2e}; spatial spread dpp {sd:.1e}, hjb {sh:.1e}"),
    )
}

fn dpp_consistency() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, bound) in [("DRIFT-LINEAR", 5e-3), ("DEGEN-VOL", 2e-2)] {
        let lp = lookup(name).unwrap().load().unwrap();
        let controls = lp.problem.controls().unwrap();
        let rep = dpp_consistency_check(&lp, &lp.grid, &controls, 0.0, 0.5).unwrap();
        ok &= rep.residual <= bound;
        parts.push(format!("{name} residual {:.2e} (bound {bound:.0e})", rep.residual));
    }
    (ok, parts.join("; "))
}

fn cross_solver() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for b in list_builtins() {
        let (_, vd, _, vh) = solve_both(&b);
        let gap = central_gap(&vd, &vh);
        worst = worst.max(gap);
        parts.push(format!("{} {gap:.1e}", b.name));
    }
    (worst <= 5e-2, format!("max gap {worst:.2e} [{}]", parts.join(", ")))
}

fn regularity() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for b in list_builtins() {
        let lp = b.load().unwrap();
        let opts = CheckOptions {
            suite: Suite::Regularity,
            benchmark: Some(&b),
            ..CheckOptions::default()
        };
        let rep = run_check_suite(&lp, &opts).unwrap();
        ok &= rep.passed;
        let growth: Vec<String> = rep
            .checks
            .iter()
            .map(|c| c.measured.map_or("n/a".into(), |m| format!("{m:+.3}")))
            .collect();
        parts.push(format!("{} growth {}", b.name, growth.join("/")));
    }
    (ok, parts.join("; "))
}

fn moments() -> Outcome {
    let deltas = [0.4, 0.2, 0.1, 0.05];
    let driftless = custom(serde_json::json!({ "b": ["0"], "sigma": [["1"]], "f": "0", "phi": "0" }));
    let drift = custom(serde_json::json!({ "b": ["1"], "sigma": [["0"]], "f": "0", "phi": "0" }));
    let s1 = moment_check(&driftless, &[0.0], &deltas, 4000, 20, 3).unwrap().slope.unwrap();
    let s2 = moment_check(&drift, &[0.0], &deltas, 100, 20, 3).unwrap().slope.unwrap();
    (
        within(s1, 1.0, 0.2) && within(s2, 2.0, 0.1),
        format!("driftless slope {s1:.4}, pure-drift slope {s2:.4}"),
    )
}

fn h3_certificate() -> Outcome {
    let s = AmbiguitySet::diagonal(&[vec![1.0, 0.0], vec![1.0, 1.0]]).unwrap();
    let c = s.check_h3().unwrap();
    let lambda = c.lambda_for[&1];
    let min = c.shifted_minimum[&1];
    (
        c.i_star == 0 && lambda == 3.0 && min == 9.0,
        format!("i* = {} (zero-based), lambda_2 = {lambda}, shifted minimum = {min}", c.i_star),
    )
}

fn scenario_lower_bound() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for b in list_builtins() {
        let (lp, vd, policy, _) = solve_both(&b);
        let x0 = [0.0];
        let steps = lp.grid.nt;
        let horizon = lp.problem.horizon;
        let mut family: Vec<VolatilitySchedule> =
            (0..lp.ambiguity.len()).map(|v| VolatilitySchedule::constant(v, steps)).collect();
        family.push(policy_schedule(&policy, 0.0, horizon, &x0, steps));
        let est = estimate_cost(&lp, 0.0, &x0, ControlSource::Policy(&policy), &family, 20_000, 11).unwrap();
        let v = vd.at_layer(0, &x0);
        let bound = 5e-2 + 3.0 * est.std_error;
        ok &= within(est.value, v, bound);
        parts.push(format!("{} MC {:.4} (SE {:.1e}) vs {v:.4}", b.name, est.value, est.std_error));
    }
    (ok, parts.join("; "))
}

fn parser() -> Outcome {
    enum Want {
        Value(f64),
        Syntax(usize),
        Unknown(usize),
        Arity(usize),
    }
    let cases: Vec<(&str, Want)> = vec![
        ("2+3*4", Want::Value(14.0)),
        ("(2+3)*4", Want::Value(20.0)),
        ("10-4-3", Want::Value(3.0)),
        ("64/4/2", Want::Value(8.0)),
        ("2^3^2", Want::Value(512.0)),
        ("-2^2", Want::Value(-4.0)),
        ("2^-1", Want::Value(0.5)),
        ("2*-3", Want::Value(-6.0)),
        ("x1^2 + max(v1, 0)", Want::Value(4.0)),
        ("pos(x1)", Want::Value(2.0)),
        ("neg(x1)", Want::Value(0.0)),
        ("pos(0-x1)", Want::Value(0.0)),
        ("neg(0-x1)", Want::Value(2.0)),
        ("pos(x1) - neg(x1)", Want::Value(2.0)),
        ("exp(0)*t", Want::Value(0.5)),
        ("min(3, 1, 2) + max(1e-1, 2.5E0)", Want::Value(3.5)),
        ("abs(v1) + sqrt(4) + log(1) + cos(0) + sin(0) + tanh(0)", Want::Value(4.0)),
        ("x3", Want::Unknown(0)),
        ("1 + v2", Want::Unknown(4)),
        ("foo(1)", Want::Unknown(0)),
        ("exp(1, 2)", Want::Arity(0)),
        ("2 * max(1)", Want::Arity(4)),
        ("", Want::Syntax(0)),
        ("1 +", Want::Syntax(3)),
        ("(1", Want::Syntax(2)),
        ("1 2", Want::Syntax(2)),
        ("1 $ 2", Want::Syntax(2)),
    ];
    let total = cases.len();
    let mut failed = Vec::new();
    for (src, want) in cases {
        let got = parse_expr(src, 2, 1).and_then(|e| e.eval(0.5, &[2.0, 0.0], &[-1.0]));
        let ok = match (&want, &got) {
            (Want::Value(v), Ok(g)) => v == g,
            (Want::Syntax(o), Err(ExprError::Syntax { offset, .. })) => o == offset,
            (Want::Unknown(o), Err(ExprError::UnknownIdentifier { offset, .. })) => o == offset,
            (Want::Arity(o), Err(ExprError::Arity { offset, .. })) => o == offset,
            _ => false,
        };
        if !ok {
            failed.push(src);
        }
    }

    let alphabet: Vec<char> = "x1v2t0345.e+-*/^(), \u{2212}minaxposegqrtlcbhd$".chars().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut crashes = 0usize;
    let mut parsed = 0usize;
    let default_hook = std::panic::take_hook();
    std::panic::set_hook(Box::new(|_| {}));
    for _ in 0..100_000 {
        let len = rng.random_range(0..32);
        let src: String = (0..len).map(|_| alphabet[rng.random_range(0..alphabet.len())]).collect();
        let x = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
        let v = [rng.random_range(-5.0..5.0)];
        let r = catch_unwind(AssertUnwindSafe(|| {
            parse_expr(&src, 2, 1).map(|e| {
                let _ = e.eval(0.3, &x, &v);
            })
        }));
        match r {
            Err(_) => crashes += 1,
            Ok(Ok(())) => parsed += 1,
            Ok(Err(_)) => {}
        }
    }
    std::panic::set_hook(default_hook);
    (
        failed.is_empty() && crashes == 0,
        format!(
            "conformance {}/{total} (failed: {failed:?}); fuzz 100000 strings, {parsed} parsed, {crashes} crashes",
            total - failed.len()
        ),
    )
}

fn main() {
    let criteria: Vec<Criterion> = vec![
        ("degenerate G-heat quadratics", degenerate_heat),
        ("convex payoff E[B1+]", convex_payoff),
        ("DRIFT-LINEAR value and policy", drift_linear),
        ("DEGEN-VOL without artificial diffusion", degen_vol),
        ("RUNCOST value and policy", runcost),
        ("QV-COST quadratic-variation cost", qv_cost),
        ("DPP consistency at delta = 0.5", dpp_consistency),
        ("cross-solver agreement", cross_solver),
        ("regularity suite", regularity),
        ("moment suite slopes", moments),
        ("H3 certificate", h3_certificate),
        ("scenario lower bound", scenario_lower_bound),
        ("expression parser", parser),
    ];
    let mut out = std::io::stdout();
    let mut failures = 0;
    for (k, (name, run)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let (ok, detail) = catch_unwind(run).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        });
        if !ok {
            failures += 1;
        }
        writeln!(
            out,
            "criterion {:>2} {} {name} ({:.1}s): {detail}",
            k + 1,
            if ok { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        )
        .unwrap();
    }
    writeln!(out, "acceptance: {} of 13 criteria passed", 13 - failures).unwrap();
    if failures > 0 {
        std::process::exit(1);
    }
}
