//! `gctl`: command-line front end for the sublinear-expectation control
//! solvers.
//!
//! Exit codes: 0 success, 2 configuration error, 3 solver error, 4 a check
//! or benchmark did not meet its tolerance. Failures print a JSON error
//! report on stdout and a one-line message on stderr.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use gctl::bench::{list_builtins, lookup, BenchmarkEntry};
use gctl::dpp::{bellman_backward, PolicyField};
use gctl::gheat::{solve_gheat, solve_gheat_directional};
use gctl::grid::GridSpec;
use gctl::gsde::{estimate_cost, schedule_family, simulate_paths, ControlSource, SimulationSpec};
use gctl::hjb::{convergence_study, solve_hjb, Reference};
use gctl::problem::config::ProblemConfig;
use gctl::problem::expr::{Expr, Scope};
use gctl::report::{lattice_error, run_check_suite, write_value_csv, CheckOptions, ErrorReport, Suite};
use gctl::{Error, ErrorCategory, LoadedProblem};

const EXIT_CONFIG: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const EXIT_CHECK: u8 = 4;

#[derive(Parser)]
#[command(name = "gctl", version, about = "Stochastic control under volatility uncertainty")]
struct Cli {
    /// Problem config (JSON).
    #[arg(long, global = true, conflicts_with = "builtin")]
    config: Option<PathBuf>,
    /// Builtin benchmark name (see `gctl list`).
    #[arg(long, global = true)]
    builtin: Option<String>,
    /// Seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output file for the command's main CSV or JSON result.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override the grid node count per axis (one value applies to all axes).
    #[arg(long, global = true, value_delimiter = ',')]
    nx: Option<Vec<usize>>,
    /// Override the number of time steps.
    #[arg(long, global = true)]
    nt: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sublinear expectation of a payoff of the Brownian motion at time T.
    GExpect {
        /// Payoff in x1..xd.
        #[arg(long)]
        payoff: String,
        #[arg(long)]
        time: f64,
        /// Evaluate a payoff of ⟨β, B⟩ instead; comma-separated β.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        direction: Option<Vec<f64>>,
    },
    /// Solve the HJB equation; V.csv goes to --out.
    SolveHjb {
        /// Also run a three-grid convergence study and print it as JSON.
        #[arg(long)]
        convergence: bool,
    },
    /// Backward dynamic programming; V.csv goes to --out.
    SolveDpp {
        /// Where to write the policy CSV.
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// Simulate the controlled SDE and estimate the cost from below.
    Simulate {
        /// Initial state, comma-separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x0: Vec<f64>,
        #[arg(long, default_value_t = 0.0)]
        t0: f64,
        /// Feedback policy CSV written by `solve-dpp`.
        #[arg(long, conflicts_with = "control")]
        policy: Option<PathBuf>,
        /// Feedback control expressions in t, x1..xn; components separated by `;`.
        #[arg(long)]
        control: Option<String>,
        /// Size of the volatility schedule family.
        #[arg(long)]
        schedules: Option<usize>,
        #[arg(long, default_value_t = 10_000)]
        paths: usize,
        /// Euler steps (default: the grid's time steps).
        #[arg(long)]
        steps: Option<usize>,
        /// Paths written to --out for the worst schedule.
        #[arg(long, default_value_t = 100)]
        record: usize,
    },
    /// Run the regularity, moment and DPP check suites.
    Check {
        #[arg(long, default_value = "all")]
        suite: Suite,
        #[arg(long, default_value_t = 2000)]
        moment_paths: usize,
    },
    /// Compare both solvers against the builtin closed forms.
    Bench {
        /// Builtins to run (default: all).
        names: Vec<String>,
    },
    /// List the builtin benchmarks.
    List {
        #[arg(long)]
        json: bool,
    },
}

/// Why the process is exiting early.
enum Failure {
    Error(Error),
    CheckFailed,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes to `path`, or to stdout when no path is given.
fn emit(path: Option<&Path>, write: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<(), Error> {
    match path {
        Some(p) => {
            let file = File::create(p).map_err(io_error(p))?;
            let mut w = BufWriter::new(file);
            write(&mut w).and_then(|_| w.flush()).map_err(io_error(p))
        }
        None => {
            let stdout = std::io::stdout();
            let mut w = stdout.lock();
            write(&mut w).map_err(io_error(Path::new("<stdout>")))
        }
    }
}

fn emit_json(path: Option<&Path>, value: &impl Serialize) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    emit(path, |w| writeln!(w, "{text}"))
}

fn print_json(value: &impl Serialize) -> Result<(), Error> {
    emit_json(None, value)
}

struct Loaded {
    problem: LoadedProblem,
    benchmark: Option<BenchmarkEntry>,
}

fn with_grid_overrides(mut cfg: ProblemConfig, cli: &Cli) -> Result<ProblemConfig, Error> {
    if let Some(nx) = &cli.nx {
        let dim = cfg.grid.nx.len();
        cfg.grid.nx = match nx.len() {
            1 => vec![nx[0]; dim],
            k if k == dim => nx.clone(),
            k => {
                return Err(Error::DimensionMismatch {
                    what: "--nx".into(),
                    expected: dim,
                    got: k,
                })
            }
        };
    }
    if let Some(nt) = cli.nt {
        cfg.grid.nt = nt;
    }
    Ok(cfg)
}

fn load(cli: &Cli) -> Result<Loaded, Error> {
    match (&cli.config, &cli.builtin) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).map_err(io_error(path))?;
            let cfg = with_grid_overrides(ProblemConfig::from_json(&text)?, cli)?;
            Ok(Loaded {
                problem: cfg.build(true)?,
                benchmark: None,
            })
        }
        (None, Some(name)) => {
            let entry = lookup(name)?;
            let cfg = with_grid_overrides(entry.config.clone(), cli)?;
            Ok(Loaded {
                problem: cfg.build(false)?,
                benchmark: Some(entry),
            })
        }
        (None, None) => Err(Error::Config("one of --config or --builtin is required".into())),
    }
}

#[derive(Serialize)]
struct GExpectation {
    payoff: String,
    time: f64,
    value: f64,
}

fn g_expect(cli: &Cli, payoff: &str, time: f64, direction: Option<&[f64]>) -> Result<(), Failure> {
    let lp = load(cli)?.problem;
    let s = &lp.ambiguity;
    let field = match direction {
        Some(beta) => {
            let g = &lp.grid;
            let axis = GridSpec::new(vec![g.x_lo[0]], vec![g.x_hi[0]], vec![g.nx[0]], g.nt)?;
            let phi = Expr::parse(payoff, Scope::new(1, 0)).map_err(|e| Error::coefficient("payoff", e))?;
            solve_gheat_directional(s, beta, &phi, time, &axis)?
        }
        None => {
            if lp.grid.dim() != s.dim() {
                return Err(Error::Unsupported(format!(
                    "the grid has {} axes but the ambiguity set is {}-dimensional; use --direction for a marginal payoff",
                    lp.grid.dim(),
                    s.dim()
                ))
                .into());
            }
            let phi = Expr::parse(payoff, Scope::new(s.dim(), 0)).map_err(|e| Error::coefficient("payoff", e))?;
            solve_gheat(s, &phi, time, &lp.grid)?
        }
    };
    let last = field.layers.len() - 1;
    let origin = vec![0.0; field.grid.dim()];
    let value = field.at_layer(last, &origin);
    if let Some(path) = cli.out.as_deref() {
        emit(Some(path), |w| {
            let dim = field.grid.dim();
            let mut header: Vec<String> = (1..=dim).map(|k| format!("x{k}")).collect();
            header.push("u".into());
            writeln!(w, "{}", header.join(","))?;
            for (x, u) in field.grid.nodes().iter().zip(&field.layers[last]) {
                let mut row: Vec<String> = x.iter().map(|c| format!("{c:?}")).collect();
                row.push(format!("{u:?}"));
                writeln!(w, "{}", row.join(","))?;
            }
            Ok(())
        })?;
    }
    print_json(&GExpectation {
        payoff: payoff.into(),
        time,
        value,
    })?;
    Ok(())
}

fn solve_hjb_cmd(cli: &Cli, convergence: bool) -> Result<(), Failure> {
    let Loaded { problem: lp, benchmark } = load(cli)?;
    let controls = lp.problem.controls()?;
    if convergence {
        let g0 = lp.grid.clone();
        let grids = vec![g0.clone(), g0.refined(), g0.refined().refined()];
        let exact = benchmark.as_ref().map(|b| b.closed_form);
        let closed = |t: f64, x: &[f64]| exact.expect("closed form present")(t, x);
        let reference = if exact.is_some() {
            Reference::Exact(&closed)
        } else {
            Reference::FinestGrid
        };
        let report = convergence_study(&lp, &grids, &controls, reference)?;
        print_json(&report)?;
        if cli.out.is_none() {
            return Ok(());
        }
    }
    let v = solve_hjb(&lp, &lp.grid, &controls)?;
    emit(cli.out.as_deref(), |mut w| write_value_csv(&v, &mut w))?;
    Ok(())
}

fn solve_dpp_cmd(cli: &Cli, policy_out: Option<&Path>) -> Result<(), Failure> {
    let lp = load(cli)?.problem;
    let controls = lp.problem.controls()?;
    let (v, policy) = bellman_backward(&lp, &lp.grid, &controls)?;
    emit(cli.out.as_deref(), |mut w| write_value_csv(&v, &mut w))?;
    if let Some(p) = policy_out {
        emit(Some(p), |mut w| policy.write_csv(&mut w))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct SimulationSummary {
    t0: f64,
    x0: Vec<f64>,
    paths: usize,
    steps: usize,
    seed: u64,
    value: f64,
    std_error: f64,
    worst_schedule: usize,
    schedules: Vec<ScheduleSummary>,
}

#[derive(Serialize)]
struct ScheduleSummary {
    vertex_index: Vec<usize>,
    mean: f64,
    std_error: f64,
}

#[allow(clippy::too_many_arguments)]
fn simulate_cmd(
    cli: &Cli,
    x0: &[f64],
    t0: f64,
    policy: Option<&Path>,
    control: Option<&str>,
    schedules: Option<usize>,
    paths: usize,
    steps: Option<usize>,
    record: usize,
) -> Result<(), Failure> {
    let lp = load(cli)?.problem;
    let n = lp.problem.n;
    if x0.len() != n {
        return Err(Error::DimensionMismatch {
            what: "--x0".into(),
            expected: n,
            got: x0.len(),
        }
        .into());
    }
    let steps = steps.unwrap_or(lp.grid.nt);
    let controls = lp.problem.controls()?;
    let policy_field;
    let feedback: Vec<Expr>;
    let source = match (policy, control) {
        (Some(path), _) => {
            let file = File::open(path).map_err(io_error(path))?;
            policy_field = PolicyField::read_csv(BufReader::new(file), &lp.grid, &controls)?;
            ControlSource::Policy(&policy_field)
        }
        (None, Some(src)) => {
            feedback = src
                .split(';')
                .enumerate()
                .map(|(k, s)| {
                    Expr::parse(s.trim(), Scope::new(n, 0)).map_err(|e| Error::coefficient(format!("control[{k}]"), e))
                })
                .collect::<Result<_, _>>()?;
            ControlSource::Feedback(&feedback)
        }
        (None, None) => ControlSource::Constant(&controls[0]),
    };
    let vertices = lp.ambiguity.len();
    let family = schedule_family(vertices, steps, schedules.unwrap_or(vertices), cli.seed);
    let est = estimate_cost(&lp, t0, x0, source, &family, paths, cli.seed)?;
    let worst = family
        .iter()
        .position(|s| *s == est.worst_schedule)
        .expect("worst schedule belongs to the family");
    if let Some(path) = cli.out.as_deref() {
        let bundle = simulate_paths(
            &lp,
            source,
            &est.worst_schedule,
            &SimulationSpec {
                t0,
                x0: x0.to_vec(),
                n_paths: record.max(1),
                n_steps: steps,
                seed: cli.seed,
            },
        )?;
        emit(Some(path), |mut w| bundle.write_csv(&mut w))?;
    }
    print_json(&SimulationSummary {
        t0,
        x0: x0.to_vec(),
        paths,
        steps,
        seed: cli.seed,
        value: est.value,
        std_error: est.std_error,
        worst_schedule: worst,
        schedules: family
            .iter()
            .zip(&est.per_schedule)
            .map(|(s, e)| ScheduleSummary {
                vertex_index: s.vertex_index.clone(),
                mean: e.mean,
                std_error: e.std_error,
            })
            .collect(),
    })?;
    Ok(())
}

fn check_cmd(cli: &Cli, suite: Suite, moment_paths: usize) -> Result<(), Failure> {
    let Loaded { problem: lp, benchmark } = load(cli)?;
    let opts = CheckOptions {
        suite,
        seed: cli.seed,
        benchmark: benchmark.as_ref(),
        moment_paths,
    };
    let report = run_check_suite(&lp, &opts)?;
    if let Some(p) = cli.out.as_deref() {
        emit_json(Some(p), &report)?;
    }
    print_json(&report)?;
    for c in report.checks.iter().filter(|c| !c.passed) {
        eprintln!("check {} failed: measured {:?}, bound {:e}", c.name, c.measured, c.bound);
    }
    if report.passed {
        Ok(())
    } else {
        Err(Failure::CheckFailed)
    }
}

#[derive(Serialize)]
struct BenchResult {
    name: String,
    tolerance: f64,
    dpp_error: f64,
    hjb_error: f64,
    passed: bool,
}

fn bench_cmd(cli: &Cli, names: &[String]) -> Result<(), Failure> {
    let entries = if names.is_empty() {
        list_builtins()
    } else {
        names.iter().map(|n| lookup(n)).collect::<Result<_, _>>()?
    };
    let mut results = Vec::with_capacity(entries.len());
    for e in &entries {
        let lp = with_grid_overrides(e.config.clone(), cli)?.build(false)?;
        let controls = lp.problem.controls()?;
        let start = std::time::Instant::now();
        let (vd, _) = bellman_backward(&lp, &lp.grid, &controls)?;
        let vh = solve_hjb(&lp, &lp.grid, &controls)?;
        let dpp_error = lattice_error(&vd, e.closed_form);
        let hjb_error = lattice_error(&vh, e.closed_form);
        let passed = dpp_error <= e.tolerance && hjb_error <= e.tolerance;
        eprintln!(
            "{:<13} dpp {dpp_error:.2e} hjb {hjb_error:.2e} tol {:.0e} {} ({:.2}s)",
            e.name,
            e.tolerance,
            if passed { "ok" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
        results.push(BenchResult {
            name: e.name.into(),
            tolerance: e.tolerance,
            dpp_error,
            hjb_error,
            passed,
        });
    }
    emit_json(cli.out.as_deref(), &results)?;
    if results.iter().all(|r| r.passed) {
        Ok(())
    } else {
        Err(Failure::CheckFailed)
    }
}

fn list_cmd(cli: &Cli, json: bool) -> Result<(), Failure> {
    let summaries: Vec<_> = list_builtins().iter().map(BenchmarkEntry::summary).collect();
    if json {
        emit_json(cli.out.as_deref(), &summaries)?;
    } else {
        emit(cli.out.as_deref(), |w| {
            for s in &summaries {
                writeln!(w, "{:<13} {}", s.name, s.description)?;
                writeln!(w, "{:<13} {}", "", s.closed_form)?;
            }
            Ok(())
        })?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("--threads: {e}")))?;
    }
    match &cli.command {
        Command::GExpect { payoff, time, direction } => g_expect(cli, payoff, *time, direction.as_deref()),
        Command::SolveHjb { convergence } => solve_hjb_cmd(cli, *convergence),
        Command::SolveDpp { policy } => solve_dpp_cmd(cli, policy.as_deref()),
        Command::Simulate {
            x0,
            t0,
            policy,
            control,
            schedules,
            paths,
            steps,
            record,
        } => simulate_cmd(
            cli,
            x0,
            *t0,
            policy.as_deref(),
            control.as_deref(),
            *schedules,
            *paths,
            *steps,
            *record,
        ),
        Command::Check { suite, moment_paths } => check_cmd(cli, *suite, *moment_paths),
        Command::Bench { names } => bench_cmd(cli, names),
        Command::List { json } => list_cmd(cli, *json),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::CheckFailed) => ExitCode::from(EXIT_CHECK),
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            let _ = print_json(&ErrorReport::from_error(&e));
            ExitCode::from(match e.category() {
                ErrorCategory::Config => EXIT_CONFIG,
                ErrorCategory::Solver => EXIT_SOLVER,
            })
        }
    }
}
