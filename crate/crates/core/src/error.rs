use thiserror::Error;

/// Errors produced by envelope solvers, strategy extraction and simulation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: face has {face} indices, weights has {weights}")]
    DimensionMismatch { face: usize, weights: usize },

    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("point is not on face {face:?}")]
    OffFace { face: Vec<usize> },

    #[error("face mismatch: expected {expected:?}, got {got:?}")]
    FaceMismatch { expected: Vec<usize>, got: Vec<usize> },

    #[error("barycentric grid too large: {nodes} nodes exceeds limit {limit}")]
    GridTooLarge { nodes: u128, limit: u128 },

    #[error("boundary data incomplete: missing value for boundary node {node}")]
    BoundaryIncomplete { node: usize },

    #[error("obstacle sweep did not converge: residual {residual:.3e} after {sweeps} sweeps")]
    NonConvergence { residual: f64, sweeps: usize },

    #[error("no planar direction found at query point (best affinity defect {defect:.3e}, tolerance {tol:.3e}); solver resolution too coarse")]
    NonPlanar { defect: f64, tol: f64 },

    #[error("invalid control: {0}")]
    InvalidControl(String),

    #[error("path exceeded maximum length ({max_steps} steps)")]
    MaxPathLength { max_steps: usize },

    #[error("invalid time-change record: {0}")]
    InvalidTimeChange(String),

    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;
