use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A forward pass or loss produced NaN/Inf for the given sample.
    #[error("non-finite value encountered at sample {index}")]
    NonFinite { index: usize },

    #[error("objective is not finite at the starting point")]
    NonFiniteStart,

    #[error("search direction is not a descent direction (slope {slope:e})")]
    NotDescent { slope: f64 },

    #[error("{function}: {constraint}")]
    DomainViolation {
        function: &'static str,
        constraint: &'static str,
    },

    #[error("ill-posed domain: {accepted} of {attempted} draws satisfied the function constraints")]
    IllPosedDomain { accepted: usize, attempted: usize },

    /// Residuals are at or below the degeneracy threshold; nothing left to fit.
    #[error("residuals are degenerate (max |r| = {max_abs:e})")]
    Degenerate { max_abs: f64 },

    #[error(
        "neighborhood holds {found} training points but at least {required} are needed; increase the radius"
    )]
    NeighborhoodTooSmall { found: usize, required: usize },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
