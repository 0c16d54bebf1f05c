use thiserror::Error;

/// Errors produced by the reconstruction pipeline and its building blocks.
#[derive(Debug, Error)]
pub enum Error {
    /// The identified state matrix is not diagonalizable with a real spectrum,
    /// so no RC realization exists.
    #[error("model is not RC-realizable: {0}")]
    NotRcRealizable(String),

    #[error("Gram matrices disagree (residual {residual:.3e}, tolerance {tolerance:.3e})")]
    GramMismatch { residual: f64, tolerance: f64 },

    #[error("matrix is not positive definite (smallest eigenvalue {min_eigenvalue:.3e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("both input and output constraints are active; the scaling problem is not convex")]
    BothConstraintsActive,

    #[error("no constraint side is active; nothing to build a scaling cone from")]
    NoConstraintActive,

    /// The eigenvalue block pattern allows off-diagonal entries in D, so the
    /// solution set is not a polyhedral cone.
    #[error(
        "repeated eigenvalues give a non-diagonal D pattern; the solution set is not polyhedral"
    )]
    NonPolyhedralCone,

    #[error("the scaling cone is trivial: only the zero vector satisfies the constraints")]
    TrivialCone,

    #[error("no strictly positive point exists on the scaling cone")]
    NoStrictlyPositive,

    #[error("no feasible scaling found (best residual {residual:.3e})")]
    NoFeasiblePoint { residual: f64 },

    #[error("transformation is numerically singular (condition number {condition:.3e})")]
    SingularT { condition: f64 },

    #[error("instance generation exceeded its budget of {attempts} attempts: {reason}")]
    GenerationBudgetExceeded { attempts: usize, reason: String },

    #[error("graphs have different node counts ({left} vs {right})")]
    NodeCountMismatch { left: usize, right: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        Error::Parse(err.to_string())
    }
}
