use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("positivity violated: propensity {value} at row {index} is outside (0, 1)")]
    Positivity { index: usize, value: f64 },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("{what} did not converge within {max_iter} iterations")]
    Convergence { what: String, max_iter: usize },

    #[error("outcome {outcome}: {source}")]
    Outcome {
        outcome: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(
        "ill-conditioned normal equations (condition estimate {condition:.3e}); \
         supply a positive ridge penalty"
    )]
    IllConditioned { condition: f64 },

    #[error("rate undefined: no subjects in the {0} class")]
    UndefinedRate(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("parse error at row {row}, column '{column}': {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by bad user input rather than a failure while
    /// computing. The CLI maps these to exit code 1.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Dimension(_)
            | Error::InvalidConfig(_)
            | Error::Validation(_)
            | Error::Parse { .. }
            | Error::Positivity { .. }
            | Error::DegenerateInput(_) => true,
            Error::Outcome { source, .. } => source.is_validation(),
            Error::Io(e) => e.kind() == std::io::ErrorKind::NotFound,
            Error::Csv(e) => match e.kind() {
                csv::ErrorKind::Io(io) => io.kind() == std::io::ErrorKind::NotFound,
                _ => true,
            },
            _ => false,
        }
    }
}
