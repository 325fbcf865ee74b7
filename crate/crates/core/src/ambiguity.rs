//! The ambiguity set Σ of covariance-rate matrices and the sublinear
//! function `G(A) = ½ sup_{γ∈Σ} tr[Aγ]` it generates.
//!
//! Σ is stored as the vertex list of a polytope. A linear functional attains
//! its supremum over a polytope at a vertex, so `G` is evaluated exactly by
//! enumerating vertices.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;

/// Entrywise symmetry tolerance for vertices and `G` arguments.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Vertices with smallest eigenvalue below `-PSD_TOL` are rejected.
pub const PSD_TOL: f64 = 1e-10;
/// Variance rates at or below this count as zero.
pub const DEGENERACY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct AmbiguitySet {
    dim: usize,
    vertices: Vec<DMatrix<f64>>,
}

/// Per-component variance bounds `σ̄_i² = 2G(e_i e_iᵀ)` and `σ_i² = −2G(−e_i e_iᵀ)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentBounds {
    pub sigma_bar_sq: Vec<f64>,
    pub sigma_low_sq: Vec<f64>,
}

/// Witness that some Brownian component is non-degenerate, together with the
/// shifts `λ_i` that make every `B^i + λ_i B^{i*}` non-degenerate.
///
/// Component indices are zero-based.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct H3Certificate {
    pub i_star: usize,
    pub sigma_low_sq_istar: f64,
    pub lambda_for: BTreeMap<usize, f64>,
    /// Minimum over vertices of `γ_ii + 2λ_i γ_{ii*} + λ_i² γ_{i*i*}` for each `i ≠ i*`.
    pub shifted_minimum: BTreeMap<usize, f64>,
    /// Largest vertex spectral norm.
    pub alpha: f64,
}

impl AmbiguitySet {
    pub fn new(vertices: Vec<DMatrix<f64>>) -> Result<Self> {
        let first = vertices.first().ok_or(Error::EmptyAmbiguitySet)?;
        let dim = first.nrows();
        if dim == 0 {
            return Err(Error::DimensionMismatch {
                what: "ambiguity vertex".into(),
                expected: 1,
                got: 0,
            });
        }
        for (k, v) in vertices.iter().enumerate() {
            if v.nrows() != dim || v.ncols() != dim {
                return Err(Error::DimensionMismatch {
                    what: format!("ambiguity vertex {k}"),
                    expected: dim,
                    got: if v.nrows() != dim { v.nrows() } else { v.ncols() },
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Config(format!("ambiguity vertex {k} has non-finite entries")));
            }
            linalg::check_symmetric(&format!("ambiguity vertex {k}"), v, SYMMETRY_TOL)?;
            let min_eigenvalue = linalg::min_eigenvalue(v);
            if min_eigenvalue < -PSD_TOL {
                return Err(Error::NotPsd {
                    vertex: k,
                    min_eigenvalue,
                });
            }
        }
        Ok(Self { dim, vertices })
    }

    /// Builds a set from nested row lists, as found in config files.
    pub fn from_rows(vertices: &[Vec<Vec<f64>>]) -> Result<Self> {
        let mats = vertices
            .iter()
            .map(|rows| linalg::from_rows(rows))
            .collect::<Result<Vec<_>>>()?;
        Self::new(mats)
    }

    /// One-dimensional set with the given variance rates as vertices.
    pub fn scalar(variances: &[f64]) -> Result<Self> {
        Self::new(
            variances
                .iter()
                .map(|&v| DMatrix::from_element(1, 1, v))
                .collect(),
        )
    }

    /// Diagonal vertices, one per entry of `diagonals`.
    pub fn diagonal(diagonals: &[Vec<f64>]) -> Result<Self> {
        Self::new(
            diagonals
                .iter()
                .map(|d| DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(d)))
                .collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vertices(&self) -> &[DMatrix<f64>] {
        &self.vertices
    }

    pub fn vertex(&self, k: usize) -> &DMatrix<f64> {
        &self.vertices[k]
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// `G(A)`, checking shape and symmetry of `A`.
    pub fn g(&self, a: &DMatrix<f64>) -> Result<f64> {
        if a.nrows() != self.dim || a.ncols() != self.dim {
            return Err(Error::DimensionMismatch {
                what: "G argument".into(),
                expected: self.dim,
                got: if a.nrows() != self.dim { a.nrows() } else { a.ncols() },
            });
        }
        linalg::check_symmetric("G argument", a, SYMMETRY_TOL)?;
        Ok(self.g_unchecked(a))
    }

    pub(crate) fn g_unchecked(&self, a: &DMatrix<f64>) -> f64 {
        0.5 * self.argmax_trace(a).1
    }

    /// Index of the first vertex maximizing `tr[Aγ]`, and that maximum.
    pub fn argmax_trace(&self, a: &DMatrix<f64>) -> (usize, f64) {
        let mut best = (0, f64::NEG_INFINITY);
        for (k, v) in self.vertices.iter().enumerate() {
            let tr = linalg::trace_product(a, v);
            if tr > best.1 {
                best = (k, tr);
            }
        }
        best
    }

    /// `G_β(a) = G(ββᵀ)a⁺ + G(−ββᵀ)a⁻`, the generator of the scalar process `⟨β, B⟩`.
    pub fn directional_g(&self, beta: &[f64], a: f64) -> Result<f64> {
        if beta.len() != self.dim {
            return Err(Error::DimensionMismatch {
                what: "direction".into(),
                expected: self.dim,
                got: beta.len(),
            });
        }
        let (upper, lower) = self.directional_bounds(beta);
        Ok(0.5 * (upper * a.max(0.0) - lower * (-a).max(0.0)))
    }

    /// `(max_γ βᵀγβ, min_γ βᵀγβ)`: the variance-rate range of `⟨β, B⟩`.
    pub fn directional_bounds(&self, beta: &[f64]) -> (f64, f64) {
        let mut hi = f64::NEG_INFINITY;
        let mut lo = f64::INFINITY;
        for v in &self.vertices {
            let mut q = 0.0;
            for i in 0..self.dim {
                for j in 0..self.dim {
                    q += beta[i] * v[(i, j)] * beta[j];
                }
            }
            hi = hi.max(q);
            lo = lo.min(q);
        }
        (hi, lo)
    }

    pub fn component_bounds(&self) -> ComponentBounds {
        let sigma_bar_sq = (0..self.dim)
            .map(|i| self.vertices.iter().map(|v| v[(i, i)]).fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let sigma_low_sq = (0..self.dim)
            .map(|i| self.vertices.iter().map(|v| v[(i, i)]).fold(f64::INFINITY, f64::min))
            .collect();
        ComponentBounds {
            sigma_bar_sq,
            sigma_low_sq,
        }
    }

    /// Vertex-level degeneracy test: true iff some vertex has smallest
    /// eigenvalue at or below [`DEGENERACY_TOL`].
    pub fn is_degenerate(&self) -> bool {
        self.vertices
            .iter()
            .any(|v| linalg::min_eigenvalue(v) <= DEGENERACY_TOL)
    }

    /// Largest spectral norm over the vertices (`sup_{γ∈Σ} |γ|`).
    pub fn max_spectral_norm(&self) -> f64 {
        self.vertices
            .iter()
            .map(linalg::spectral_norm)
            .fold(0.0, f64::max)
    }

    /// Finds the first component with positive lower variance rate and the
    /// shift `λ = (2α+1)/σ²_{i*}` for every other component.
    pub fn check_h3(&self) -> Result<H3Certificate> {
        let bounds = self.component_bounds();
        let i_star = bounds
            .sigma_low_sq
            .iter()
            .position(|&s| s > DEGENERACY_TOL)
            .ok_or(Error::NoNondegenerateComponent)?;
        let sigma_low_sq_istar = bounds.sigma_low_sq[i_star];
        let alpha = self.max_spectral_norm();
        let lambda = (2.0 * alpha + 1.0) / sigma_low_sq_istar;
        let mut lambda_for = BTreeMap::new();
        let mut shifted_minimum = BTreeMap::new();
        for i in (0..self.dim).filter(|&i| i != i_star) {
            let min = self.shifted_form_minimum(i, i_star, lambda);
            // Holds for any valid Σ by construction of λ; a failure means the
            // vertex list broke an invariant.
            if !(min > 0.0) {
                return Err(Error::NoNondegenerateComponent);
            }
            lambda_for.insert(i, lambda);
            shifted_minimum.insert(i, min);
        }
        Ok(H3Certificate {
            i_star,
            sigma_low_sq_istar,
            lambda_for,
            shifted_minimum,
            alpha,
        })
    }

    /// `min_γ γ_ii + 2λγ_{ij} + λ²γ_jj` over the vertices.
    pub fn shifted_form_minimum(&self, i: usize, j: usize, lambda: f64) -> f64 {
        self.vertices
            .iter()
            .map(|v| v[(i, i)] + 2.0 * lambda * v[(i, j)] + lambda * lambda * v[(j, j)])
            .fold(f64::INFINITY, f64::min)
    }
}
