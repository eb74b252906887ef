use alloc::string::String;
use alloc::vec::Vec;

use crate::ode::OdeError;

/// Errors raised by the analytic and numerical routines in this crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: {detail}")]
    DimensionMismatch { context: &'static str, detail: String },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("matrix is indefinite (min eigenvalue {min_eigenvalue:e})")]
    Indefinite { min_eigenvalue: f64 },

    #[error("domain error: {0}")]
    Domain(&'static str),

    #[error("degenerate beta: norm {norm:e} below threshold")]
    DegenerateBeta { norm: f64 },

    #[error("degenerate neurons (zero contribution): {0:?}")]
    DegenerateNeurons(Vec<usize>),

    #[error("singular hyperbolic coordinates (mu = 0 with delta > 0)")]
    SingularCoordinates,

    #[error("initialization is bound to a saddle point")]
    SaddleBound,

    #[error("inconsistent coordinates: {0}")]
    InconsistentCoordinates(&'static str),

    #[error("conservation violated: residual {residual:e} exceeds {tolerance:e}")]
    ConservationViolated { residual: f64, tolerance: f64 },

    #[error("neurons {0} and {1} have parallel boundary lines")]
    ParallelNeurons(usize, usize),

    #[error("redundant neuron: regions {left} and {right} differ in {hamming} pattern entries")]
    RedundantNeuron { left: usize, right: usize, hamming: usize },

    #[error("problem size {size} exceeds limit {limit}")]
    SizeLimit { size: usize, limit: usize },

    #[error("invalid learning rates (must be positive and finite)")]
    InvalidRates,

    #[error(transparent)]
    Ode(#[from] OdeError),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn mismatch(context: &'static str, detail: String) -> Error {
    Error::DimensionMismatch { context, detail }
}
