use thiserror::Error;

/// Errors surfaced by the linear algebra, assembly and training layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    /// A Cholesky factorization hit a non-positive pivot; the matrix is not
    /// positive definite (or assembly produced garbage).
    #[error("matrix not positive definite: pivot {pivot:.3e} at index {index}")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("matrix not symmetric: |A[{i},{j}] - A[{j},{i}]| = {diff:.3e}")]
    NotSymmetric { i: usize, j: usize, diff: f64 },

    #[error(
        "CG did not converge in {iters} iterations (relative residual {rel_residual:.3e})"
    )]
    CgDidNotConverge { iters: usize, rel_residual: f64 },

    #[error("degenerate triangle {tri}: signed area {area:.3e}")]
    DegenerateTriangle { tri: usize, area: f64 },

    #[error("point ({x}, {y}) outside the unit square")]
    OutsideDomain { x: f64, y: f64 },

    #[error("parameter out of range: {0}")]
    ParameterOutOfRange(String),

    #[error("relative residual undefined: loss at zero vanishes (f = 0?)")]
    ZeroLoadScale,

    #[error("non-finite {what} encountered at iteration {iter}")]
    NonFinite { what: &'static str, iter: usize },

    #[error("network/tape mismatch: {0}")]
    TapeMismatch(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
