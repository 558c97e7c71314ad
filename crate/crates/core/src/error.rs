use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input failed a structural or domain check.
    #[error("validation error: {0}")]
    Validation(String),

    /// Monotone coding was violated under the reject policy.
    #[error("monotonicity violated for {} unit(s): {:?}", units.len(), units)]
    Monotonicity { units: Vec<usize> },

    /// A column named by the schema is absent from the input.
    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("row {row}, column `{column}`: cannot parse `{value}`")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    /// A conditioning stratum needed for estimation is empty or degenerate.
    #[error("positivity failure: {0}")]
    Positivity(String),

    #[error("learner failure: {0}")]
    Learner(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Positivity(_) => 3,
            Error::Validation(_)
            | Error::Monotonicity { .. }
            | Error::MissingColumn(_)
            | Error::Parse { .. }
            | Error::InvalidArgument(_) => 2,
            Error::Learner(_) | Error::Io(_) | Error::Csv(_) | Error::Json(_) => 1,
        }
    }

    /// Short machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Validation(_) => "validation",
            Error::Monotonicity { .. } => "monotonicity",
            Error::MissingColumn(_) => "missing_column",
            Error::Parse { .. } => "parse",
            Error::Positivity(_) => "positivity",
            Error::Learner(_) => "learner",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}
