use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn gctl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gctl"))
        .args(args)
        .output()
        .expect("gctl runs")
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn config(name: &str) -> String {
    repo_root().join("configs").join(name).display().to_string()
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}):\n{}\nstderr:\n{}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn assert_valid(schema: &str, instance: &Value) {
    let path = repo_root().join("schemas").join(schema);
    let schema: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&schema).expect("schema compiles");
    let errors: Vec<String> = validator.iter_errors(instance).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{schema} violations: {errors:?}\n{instance:#}");
}

fn write_temp(dir: &Path, name: &str, value: &Value) -> String {
    let p = dir.join(name);
    std::fs::write(&p, value.to_string()).unwrap();
    p.display().to_string()
}

fn degenerate_config() -> Value {
    serde_json::json!({
        "name": "no-h3",
        "state_dim": 2, "brownian_dim": 2, "control_dim": 1, "horizon": 1.0,
        "ambiguity": { "vertices": [[[1.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 1.0]]] },
        "control_set": { "type": "finite", "points": [[0.0]] },
        "coefficients": { "b": ["0", "0"], "sigma": [["1", "0"], ["0", "1"]], "f": "0", "phi": "x1" },
        "grid": { "x_lo": [-4.0, -4.0], "x_hi": [4.0, 4.0], "nx": [21, 21], "nt": 10 }
    })
}

#[test]
fn list_shows_six_resolvable_builtins() {
    let out = gctl(&["list", "--json"]);
    assert!(out.status.success());
    let list = stdout_json(&out);
    assert_valid("builtin_list.schema.json", &list);
    let names: Vec<&str> = list.as_array().unwrap().iter().map(|e| e["name"].as_str().unwrap()).collect();
    assert_eq!(
        names,
        ["DRIFT-LINEAR", "DEGEN-VOL", "RUNCOST", "QV-COST", "GHEAT-CONVEX", "DEGEN-GHEAT"]
    );
    for name in names {
        let out = gctl(&["--builtin", name, "--nx", "41", "--nt", "4", "solve-hjb"]);
        assert!(out.status.success(), "{name}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let text = gctl(&["list"]);
    assert!(String::from_utf8_lossy(&text.stdout).contains("V(t,x) = x - (T - t)"));
}

#[test]
fn unknown_builtin_suggests_a_name() {
    let out = gctl(&["--builtin", "degen-vl", "solve-dpp"]);
    assert_eq!(out.status.code(), Some(2));
    let report = stdout_json(&out);
    assert_valid("error_report.schema.json", &report);
    assert_eq!(report["error"]["kind"], "UnknownBuiltin");
    assert!(report["error"]["message"].as_str().unwrap().contains("DEGEN-VOL"));
}

#[test]
fn check_passes_on_drift_linear() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("report.json");
    let out = gctl(&["--builtin", "DRIFT-LINEAR", "--out", out_path.to_str().unwrap(), "check", "--suite", "all"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = stdout_json(&out);
    assert_valid("check_report.schema.json", &report);
    assert_eq!(report["passed"], true);
    let names: Vec<&str> = report["checks"].as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap()).collect();
    for expected in ["regularity.space_ratio_growth", "moments.log_log_slope", "dpp.consistency_residual", "dpp.hjb_agreement"] {
        assert!(names.contains(&expected), "{names:?}");
    }
    let saved: Value = serde_json::from_str(&std::fs::read_to_string(out_path).unwrap()).unwrap();
    assert_eq!(saved, report);
}

#[test]
fn config_without_h3_exits_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_temp(dir.path(), "no_h3.json", &degenerate_config());
    let out = gctl(&["--config", &path, "check"]);
    assert_eq!(out.status.code(), Some(2));
    let report = stdout_json(&out);
    assert_valid("error_report.schema.json", &report);
    assert_eq!(report["error"]["kind"], "NoNondegenerateComponent");
    assert_eq!(report["error"]["category"], "config");
}

#[test]
fn schema_violations_exit_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = degenerate_config();
    cfg["ambiguity"]["vertices"] = serde_json::json!([[[1.0, 0.0], [0.0, 1.0]]]);
    cfg["coefficients"]["g"] = serde_json::json!({ "21": "1" });
    let path = write_temp(dir.path(), "lower.json", &cfg);
    let out = gctl(&["--config", &path, "solve-hjb"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stdout_json(&out)["error"]["message"].as_str().unwrap().contains("upper-triangle"));
}

#[test]
fn coarse_degen_vol_fails_the_dpp_suite() {
    let out = gctl(&["--builtin", "DEGEN-VOL", "--nx", "5", "check", "--suite", "dpp"]);
    assert_eq!(out.status.code(), Some(4));
    let report = stdout_json(&out);
    assert_valid("check_report.schema.json", &report);
    assert_eq!(report["passed"], false);
    let failed: Vec<&str> = report["checks"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["passed"] == false)
        .map(|c| c["name"].as_str().unwrap())
        .collect();
    assert!(failed.contains(&"dpp.closed_form_error"), "{failed:?}");
}

#[test]
fn solver_errors_exit_with_code_three() {
    // 100001 nodes on [-12, 12] need more than 10⁷ explicit substeps.
    let out = gctl(&["--builtin", "GHEAT-CONVEX", "--nx", "100001", "g-expect", "--payoff", "x1^2", "--time", "1"]);
    assert_eq!(out.status.code(), Some(3));
    let report = stdout_json(&out);
    assert_valid("error_report.schema.json", &report);
    assert_eq!(report["error"]["kind"], "CflOverflow");
}

#[test]
fn g_expect_reports_value_and_layer() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("u.csv");
    let out = gctl(&[
        "--builtin", "DEGEN-GHEAT", "--nx", "241", "--out", csv.to_str().unwrap(),
        "g-expect", "--payoff", "pos(x1)", "--time", "1",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    assert_valid("g_expectation.schema.json", &v);
    assert!((v["value"].as_f64().unwrap() - 0.398_942).abs() < 5e-3);
    let text = std::fs::read_to_string(csv).unwrap();
    assert_eq!(text.lines().next(), Some("x1,u"));
    assert_eq!(text.lines().count(), 242);
}

#[test]
fn convergence_report_matches_schema() {
    let out = gctl(&["--builtin", "GHEAT-CONVEX", "--nx", "121", "--nt", "10", "solve-hjb", "--convergence"]);
    assert!(out.status.success());
    let rep = stdout_json(&out);
    assert_valid("convergence_report.schema.json", &rep);
    let errors: Vec<f64> = rep["sup_error"].as_array().unwrap().iter().map(|e| e.as_f64().unwrap()).collect();
    assert_eq!(errors.len(), 3);
    assert!(errors.windows(2).all(|w| w[1] < w[0]), "{errors:?}");
    assert!(rep["order"].as_f64().unwrap() >= 0.45);
}

#[test]
fn dpp_policy_drives_the_simulator() {
    let dir = tempfile::tempdir().unwrap();
    let v = dir.path().join("V.csv");
    let p = dir.path().join("P.csv");
    let out = gctl(&[
        "--builtin", "RUNCOST", "--out", v.to_str().unwrap(),
        "solve-dpp", "--policy", p.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(std::fs::read_to_string(&v).unwrap().starts_with("t,x1,value\n"));
    assert!(std::fs::read_to_string(&p).unwrap().starts_with("t,x1,v1,vertex\n"));
    let out = gctl(&[
        "--builtin", "RUNCOST", "simulate", "--x0", "0", "--policy", p.to_str().unwrap(),
        "--schedules", "4", "--paths", "20000",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let est = stdout_json(&out);
    assert_valid("simulation_summary.schema.json", &est);
    let se = est["std_error"].as_f64().unwrap();
    assert!((est["value"].as_f64().unwrap() + 0.25).abs() <= 5e-2 + 3.0 * se, "{est:#}");
    assert_eq!(est["schedules"].as_array().unwrap().len(), 4);
}

#[test]
fn fixed_seed_runs_are_bit_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |tag: &str, threads: &str| {
        let csv = dir.path().join(format!("paths-{tag}.csv"));
        let out = gctl(&[
            "--config", &config("uncertain_vol_1d.json"), "--seed", "42", "--threads", threads,
            "--out", csv.to_str().unwrap(),
            "simulate", "--x0", "0.5", "--control", "0 - 0.2*x1", "--schedules", "5", "--paths", "2000",
            "--record", "20",
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        (out.stdout, std::fs::read(csv).unwrap())
    };
    let a = run("a", "1");
    let b = run("b", "4");
    let c = run("c", "4");
    assert_eq!(a, b);
    assert_eq!(b, c);
    assert_valid("simulation_summary.schema.json", &serde_json::from_slice(&a.0).unwrap());

    let v1 = gctl(&["--config", &config("uncertain_vol_1d.json"), "--seed", "7", "solve-dpp"]);
    let v2 = gctl(&["--config", &config("uncertain_vol_1d.json"), "--seed", "7", "--threads", "2", "solve-dpp"]);
    assert!(v1.status.success());
    assert_eq!(v1.stdout, v2.stdout);

    let c1 = gctl(&["--config", &config("uncertain_vol_1d.json"), "--seed", "3", "check", "--suite", "moments"]);
    let c2 = gctl(&["--config", &config("uncertain_vol_1d.json"), "--seed", "3", "check", "--suite", "moments"]);
    assert_eq!(c1.stdout, c2.stdout);
}

#[test]
fn shipped_configs_pass_their_checks() {
    for name in ["uncertain_vol_1d.json", "partially_degenerate_2d.json"] {
        let text = std::fs::read_to_string(config(name)).unwrap();
        assert_valid("problem.schema.json", &serde_json::from_str(&text).unwrap());
        let out = gctl(&["--config", &config(name), "check", "--suite", "dpp"]);
        assert_eq!(out.status.code(), Some(0), "{name}: {}", String::from_utf8_lossy(&out.stdout));
    }
}

#[test]
fn builtin_configs_match_the_problem_schema() {
    let out = gctl(&["bench", "QV-COST", "DRIFT-LINEAR"]);
    assert!(out.status.success());
    let rep = stdout_json(&out);
    assert_valid("bench_report.schema.json", &rep);
    assert_eq!(rep.as_array().unwrap().len(), 2);
    assert_valid("problem.schema.json", &degenerate_config());
}
