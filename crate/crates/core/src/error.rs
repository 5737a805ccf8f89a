//! Error types for the whole pipeline.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CoreError>;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape error: expected {expected}x{expected}, got {got_rows}x{got_cols}")]
    Shape {
        expected: usize,
        got_rows: usize,
        got_cols: usize,
    },

    #[error("hermiticity violation: residual {residual:.3e} exceeds {tol:.3e}")]
    Hermiticity { residual: f64, tol: f64 },

    #[error("gap collapse: min observed gap {gap:.3e} below floor {floor:.3e} at (t, alpha) = ({t}, {alpha})")]
    GapCollapse {
        gap: f64,
        floor: f64,
        t: f64,
        alpha: f64,
    },

    #[error("contour violation: {0}")]
    ContourViolation(String),

    #[error("quadrature did not converge: {0}")]
    QuadratureNonConvergence(String),

    #[error(
        "propagation did not converge: residual {residual:.3e} after {steps} steps (tol {tol:.3e})"
    )]
    PropagationNonConvergence {
        residual: f64,
        steps: usize,
        tol: f64,
    },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("intertwining violation: residual {residual:.3e} exceeds {tol:.3e}")]
    Intertwining { residual: f64, tol: f64 },

    #[error("periodicity violation: {0}")]
    Periodicity(String),

    #[error("degeneracy error: {0}")]
    Degeneracy(String),

    #[error("spectral structure error: residual {residual:.3e} exceeds {tol:.3e}")]
    Structure { residual: f64, tol: f64 },

    #[error("frame error: {0}")]
    Frame(String),

    #[error("loop is not closed: endpoint mismatch {0:.3e}")]
    NonClosure(f64),

    #[error("projected loop self-intersects near t = {0}")]
    SelfIntersection(f64),

    #[error("degenerate normalization: {0}")]
    DegenerateNormalization(String),

    #[error("non-constant phase: {0}")]
    NonConstantPhase(String),

    #[error("finite-difference contamination: {0}")]
    FdContamination(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
