use thiserror::Error;

use crate::flowcore::FlowReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not Hermitian: max |A - A*| = {asymmetry:e} exceeds {tolerance:e}")]
    NotHermitian { asymmetry: f64, tolerance: f64 },

    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("function is not finite at eigenvalue {eigenvalue}")]
    Domain { eigenvalue: f64 },

    #[error("not a projection: |P^2 - P| = {idempotency_defect:e}, trace residual {trace_residual:e}")]
    NotProjection {
        idempotency_defect: f64,
        trace_residual: f64,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("quadrature did not reach tolerance {tolerance:e}: estimate {value} with error {error_estimate:e} after {evaluations} evaluations")]
    Quadrature {
        value: f64,
        error_estimate: f64,
        evaluations: usize,
        tolerance: f64,
    },

    #[error("endpoint at t = {t} is not invertible (smallest |eigenvalue| {gap:e}); regularize the path first")]
    NonInvertibleEndpoint { t: f64, gap: f64 },

    #[error("no admissible epsilon: {0}")]
    NoAdmissibleEpsilon(String),

    #[error("path junction mismatch: |D_end - D_start| = {mismatch:e}")]
    JunctionMismatch { mismatch: f64 },

    #[error("endpoints are not unitarily equivalent via the supplied unitary: defect {defect:e}")]
    EquivalenceCheck { defect: f64 },

    #[error("relative index computations disagree: round(Tr(P-Q)) = {trace}, ind(QP) = {fredholm}")]
    IndexMismatch { trace: i64, fredholm: i64 },

    #[error("{method} did not converge: {reason}")]
    NotConverged {
        method: &'static str,
        reason: String,
        report: Box<FlowReport>,
    },

    #[error("path invariant violated: {0}")]
    PathInvariant(String),
}
