use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised while parsing or evaluating a coefficient expression.
///
/// Every variant carries the byte offset of the offending token or node in
/// the source text.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("function `{name}` at byte {offset} expects {expected} argument(s), got {got}")]
    Arity {
        name: String,
        expected: &'static str,
        got: usize,
        offset: usize,
    },
    #[error("domain error at byte {offset}: {message}")]
    Domain { offset: usize, message: String },
}

impl ExprError {
    pub fn offset(&self) -> usize {
        match self {
            ExprError::Syntax { offset, .. }
            | ExprError::UnknownIdentifier { offset, .. }
            | ExprError::Arity { offset, .. }
            | ExprError::Domain { offset, .. } => *offset,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("in `{field}`: {source}")]
    Coefficient {
        field: String,
        #[source]
        source: ExprError,
    },
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        got: usize,
    },
    #[error("matrix {what} is not symmetric: |a[{i}][{j}] - a[{j}][{i}]| = {gap:e}")]
    NotSymmetric {
        what: String,
        i: usize,
        j: usize,
        gap: f64,
    },
    #[error("ambiguity vertex {vertex} is not positive semidefinite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPsd { vertex: usize, min_eigenvalue: f64 },
    #[error("ambiguity set must contain at least one vertex")]
    EmptyAmbiguitySet,
    #[error("no Brownian component has a positive lower variance rate; the control problem is ill-posed")]
    NoNondegenerateComponent,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown builtin `{name}`{}", suggestion.as_ref().map(|s| format!(" (did you mean `{s}`?)")).unwrap_or_default())]
    UnknownBuiltin {
        name: String,
        suggestion: Option<String>,
    },
    #[error("time step needs {required} substeps, above the limit of {limit}")]
    CflOverflow { required: u64, limit: u64 },
    #[error("non-finite value at step {step}{}", context.as_ref().map(|c| format!(" ({c})")).unwrap_or_default())]
    NonFinite {
        step: usize,
        context: Option<String>,
    },
    #[error("quadrature point {point:?} from node {node:?} lies more than one cell outside the grid; enlarge the domain or shrink the time step")]
    DomainEscape { node: Vec<f64>, point: Vec<f64> },
    #[error("monotone stencil unavailable: {0}")]
    MonotonicityUnavailable(String),
    #[error("control set discretization is empty")]
    EmptyControls,
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Solver,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Expr(ExprError::Domain { .. })
            | Error::Coefficient {
                source: ExprError::Domain { .. },
                ..
            }
            | Error::CflOverflow { .. }
            | Error::NonFinite { .. }
            | Error::DomainEscape { .. }
            | Error::MonotonicityUnavailable(_)
            | Error::Unsupported(_) => ErrorCategory::Solver,
            _ => ErrorCategory::Config,
        }
    }

    pub fn coefficient(field: impl Into<String>, source: ExprError) -> Self {
        Error::Coefficient {
            field: field.into(),
            source,
        }
    }
}
