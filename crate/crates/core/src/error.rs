use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid user-supplied parameters (grid sizes, exponents, ε choices).
    #[error("configuration error: {0}")]
    Config(String),

    /// Grid / region / cell-grid sizes that do not line up.
    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("linear solver did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("operator is not positive definite (curvature {curvature:.3e} at iteration {iteration})")]
    Indefinite { iteration: usize, curvature: f64 },

    #[error("Newton stagnated at t = {time}: residual {residual:.3e} after {iterations} iterations")]
    StepFailure {
        time: f64,
        residual: f64,
        iterations: usize,
    },

    #[error("period map did not converge after {periods} periods (defect {defect:.3e}, contraction estimate {contraction:.3})")]
    PeriodMap {
        periods: usize,
        defect: f64,
        contraction: f64,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures caused by bad input rather than by a solver.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Alignment(_) | Error::Validation(_) | Error::Format(_)
        )
    }
}
