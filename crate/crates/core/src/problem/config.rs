//! JSON problem configuration.
//!
//! ```json
//! {
//!   "name": "drift-linear",
//!   "state_dim": 1, "brownian_dim": 1, "control_dim": 1, "horizon": 1.0,
//!   "ambiguity": { "vertices": [[[0.0]], [[1.0]]] },
//!   "control_set": { "type": "box", "lo": [-1], "hi": [1], "counts": [21] },
//!   "coefficients": {
//!     "b": ["v1"], "sigma": [["1"]], "f": "0", "phi": "x1",
//!     "h": { "11": ["0"] }, "g": { "11": "0" }
//!   },
//!   "grid": { "x_lo": [-6], "x_hi": [6], "nx": [241], "nt": 50 }
//! }
//! ```
//!
//! `h` and `g` are keyed by one-based index pairs written `"ij"` (or `"i,j"`)
//! with `i ≤ j`; omitted entries are zero.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::expr::{Expr, Scope};
use super::{ControlProblem, ControlSet, LoadedProblem};
use crate::ambiguity::AmbiguitySet;
use crate::error::{Error, Result};
use crate::grid::GridSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub name: String,
    pub state_dim: usize,
    pub brownian_dim: usize,
    pub control_dim: usize,
    pub horizon: f64,
    pub ambiguity: AmbiguityConfig,
    pub control_set: ControlSetConfig,
    pub coefficients: CoefficientConfig,
    pub grid: GridConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmbiguityConfig {
    pub vertices: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum ControlSetConfig {
    Box {
        lo: Vec<f64>,
        hi: Vec<f64>,
        counts: Vec<usize>,
    },
    Finite {
        points: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientConfig {
    pub b: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub h: BTreeMap<String, Vec<String>>,
    pub sigma: Vec<Vec<String>>,
    pub f: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub g: BTreeMap<String, String>,
    pub phi: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub x_lo: Vec<f64>,
    pub x_hi: Vec<f64>,
    pub nx: Vec<usize>,
    pub nt: usize,
}

/// Reads, validates and builds a problem from a JSON config file.
///
/// The H3 certificate is required: a config without a non-degenerate
/// Brownian component fails with [`Error::NoNondegenerateComponent`].
pub fn load_problem(path: impl AsRef<Path>) -> Result<LoadedProblem> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_problem_str(&text)
}

pub fn load_problem_str(text: &str) -> Result<LoadedProblem> {
    let cfg: ProblemConfig =
        serde_json::from_str(text).map_err(|e| Error::Config(format!("schema violation: {e}")))?;
    cfg.build(true)
}

fn parse_pair(key: &str, d: usize, what: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("{what} key `{key}` must name a pair of indices like \"12\""));
    let (i, j) = if let Some((a, b)) = key.split_once(',') {
        (
            a.trim().parse::<usize>().map_err(|_| bad())?,
            b.trim().parse::<usize>().map_err(|_| bad())?,
        )
    } else {
        let bytes = key.as_bytes();
        if bytes.len() != 2 || !bytes.iter().all(u8::is_ascii_digit) {
            return Err(bad());
        }
        ((bytes[0] - b'0') as usize, (bytes[1] - b'0') as usize)
    };
    if i == 0 || j == 0 || i > d || j > d {
        return Err(Error::Config(format!("{what} key `{key}` is out of range for brownian_dim {d}")));
    }
    if i > j {
        return Err(Error::Config(format!(
            "{what} key `{key}`: only upper-triangle entries (i <= j) are accepted; {what}_ji is implied by symmetry"
        )));
    }
    Ok((i - 1, j - 1))
}

impl ProblemConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("schema violation: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Parses every expression and validates the instance. With
    /// `require_h3`, a missing H3 certificate is an error; otherwise it is
    /// recorded as absent.
    pub fn build(&self, require_h3: bool) -> Result<LoadedProblem> {
        let (n, d, m) = (self.state_dim, self.brownian_dim, self.control_dim);
        let scope = Scope::new(n, m);
        let parse = |field: String, src: &str| {
            Expr::parse(src, scope).map_err(|e| Error::coefficient(field, e))
        };
        let c = &self.coefficients;
        let b = c
            .b
            .iter()
            .enumerate()
            .map(|(k, s)| parse(format!("b[{k}]"), s))
            .collect::<Result<Vec<_>>>()?;
        let sigma = c
            .sigma
            .iter()
            .enumerate()
            .map(|(r, row)| {
                row.iter()
                    .enumerate()
                    .map(|(k, s)| parse(format!("sigma[{r}][{k}]"), s))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let mut h = BTreeMap::new();
        for (key, exprs) in &c.h {
            let ij = parse_pair(key, d, "h")?;
            let parsed = exprs
                .iter()
                .enumerate()
                .map(|(k, s)| parse(format!("h{key}[{k}]"), s))
                .collect::<Result<Vec<_>>>()?;
            if h.insert(ij, parsed).is_some() {
                return Err(Error::Config(format!("duplicate h entry `{key}`")));
            }
        }
        let mut g = BTreeMap::new();
        for (key, src) in &c.g {
            let ij = parse_pair(key, d, "g")?;
            if g.insert(ij, parse(format!("g{key}"), src)?).is_some() {
                return Err(Error::Config(format!("duplicate g entry `{key}`")));
            }
        }
        let phi = Expr::parse(&c.phi, Scope::new(n, 0)).map_err(|e| Error::coefficient("phi", e))?;
        let control_set = match &self.control_set {
            ControlSetConfig::Box { lo, hi, counts } => ControlSet::Box {
                lo: lo.clone(),
                hi: hi.clone(),
                counts: counts.clone(),
            },
            ControlSetConfig::Finite { points } => ControlSet::Finite {
                points: points.clone(),
            },
        };
        let problem = ControlProblem {
            name: self.name.clone(),
            n,
            d,
            m,
            horizon: self.horizon,
            b,
            h,
            sigma,
            f: parse("f".into(), &c.f)?,
            g,
            phi,
            control_set,
        };
        problem.validate()?;

        let ambiguity = AmbiguitySet::from_rows(&self.ambiguity.vertices)?;
        if ambiguity.dim() != d {
            return Err(Error::DimensionMismatch {
                what: "ambiguity vertices vs brownian_dim".into(),
                expected: d,
                got: ambiguity.dim(),
            });
        }
        let grid = GridSpec::new(
            self.grid.x_lo.clone(),
            self.grid.x_hi.clone(),
            self.grid.nx.clone(),
            self.grid.nt,
        )?;
        if grid.dim() != n {
            return Err(Error::DimensionMismatch {
                what: "grid vs state_dim".into(),
                expected: n,
                got: grid.dim(),
            });
        }
        let h3 = match ambiguity.check_h3() {
            Ok(cert) => Some(cert),
            Err(e) if require_h3 => return Err(e),
            Err(_) => None,
        };
        let lipschitz = problem.lipschitz_spot_check(&grid.x_lo, &grid.x_hi, 100, 0x5eed);
        Ok(LoadedProblem {
            problem,
            ambiguity,
            grid,
            h3,
            warnings: lipschitz.warnings,
        })
    }
}
