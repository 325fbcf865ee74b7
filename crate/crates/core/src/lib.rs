//! Finite-horizon stochastic optimal control under volatility uncertainty.
//!
//! The uncertainty is described by a finite family of covariance-rate
//! matrices (an [`AmbiguitySet`]); the induced sublinear function
//! `G(A) = ½ max_γ tr[Aγ]` drives every solver in the crate:
//!
//! * [`gheat`] evaluates sublinear expectations by solving the G-heat equation
//!   with an explicit monotone scheme;
//! * [`gsde`] simulates the controlled SDE under piecewise-constant volatility
//!   scenarios and estimates the cost functional from below;
//! * [`dpp`] computes the value function by backward dynamic programming with
//!   Gauss–Hermite quadrature;
//! * [`hjb`] solves the Hamilton–Jacobi–Bellman equation with an upwinded
//!   explicit monotone scheme;
//! * [`bench`] and [`report`] hold the closed-form benchmark registry and the
//!   property/regularity check suites used by the `gctl` command line tool.
//!
//! Degenerate ambiguity sets (some vertices singular) are the intended use
//! case: none of the schemes add artificial diffusion.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod ambiguity;
pub mod bench;
pub mod dpp;
pub mod error;
pub mod gheat;
pub mod grid;
pub mod gsde;
pub mod hjb;
pub mod linalg;
pub mod problem;
pub mod quadrature;
pub mod report;
mod stencil;

pub use ambiguity::{AmbiguitySet, ComponentBounds, H3Certificate};
pub use error::{Error, ErrorCategory, ExprError, Result};
pub use grid::{GridSpec, ValueField};
pub use problem::expr::Expr;
pub use problem::{ControlProblem, ControlSet, LoadedProblem};
