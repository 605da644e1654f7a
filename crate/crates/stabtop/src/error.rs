//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("node index {node} out of range (mesh has {count} nodes)")]
    NodeOutOfRange { node: usize, count: usize },

    #[error("mesh dimensions ({nx} x {ny}) incompatible with symmetry {spec}")]
    IncompatibleSymmetry { nx: usize, ny: usize, spec: String },

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("element {element} inverted: interpolated deformation gradient has det {det:.3e}")]
    ElementInversion { element: usize, det: f64 },

    #[error("deformation gradient is singular (det F = {det:.3e})")]
    SingularConfiguration { det: f64 },

    #[error(
        "equilibrium analysis failed: cutoff exhausted at c = {cutoff:.3} \
         (reached load factor {gamma_reached:.6e} of {gamma_target:.6e}, last residual {residual:.3e})"
    )]
    AnalysisFailure {
        cutoff: f64,
        gamma_reached: f64,
        gamma_target: f64,
        residual: f64,
    },

    #[error("adjoint solve failed: tangent stiffness is singular at the converged state")]
    AdjointSolveFailure,

    #[error("eigensolver did not converge: {0}")]
    EigenNonConvergence(String),

    #[error("linear solve failed: {0}")]
    LinearSolveFailure(String),

    #[error("repeated eigenvalue detected in cluster starting at index {index}; use the cluster path")]
    RepeatedEigenvalue { index: usize },

    #[error("path tracing failed: {0}")]
    PathFailure(String),

    #[error("no eigenvalue sign change across the given path segment")]
    NoSignChange,

    #[error("branch switch corrector kept returning to the primary branch")]
    BranchSwitchFailure,

    #[error("MMA subproblem infeasible: {0}")]
    MmaInfeasible(String),

    #[error("solid region is disconnected or misses supports/loads: {0}")]
    DisconnectedRegion(String),

    #[error("{0}")]
    Invalid(String),
}
