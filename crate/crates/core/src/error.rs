use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("column {name:?} has no observed values")]
    UnimputableColumn { col: usize, name: String },

    #[error("matrix is not positive definite (pivot {pivot})")]
    FactorizationFailure { pivot: usize },

    #[error("no row has an out-of-bag prediction")]
    OobUnavailable,

    #[error("iteration difference is undefined: imputed columns are all zero")]
    DegenerateDiff,

    #[error("imputation failed: {0}")]
    ImputationFailure(String),

    #[error("amputation failed: {0}")]
    AmputationFailure(String),

    #[error("zero denominator in {0}")]
    ZeroDenominator(&'static str),

    #[error("design matrix is rank deficient")]
    SingularDesign,

    #[error("NRMSE needs at least two masked cells with non-zero spread")]
    DegenerateNrmse,

    #[error("correlation undefined for a constant vector")]
    DegenerateCorrelation,

    #[error("parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("{failed} of {total} replicates failed")]
    TooManyFailures { failed: usize, total: usize },
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        match e.kind() {
            csv::ErrorKind::Io(_) => Error::Io(e.to_string()),
            _ => Error::Parse {
                row: e.position().map_or(0, |p| p.line() as usize),
                col: 0,
                msg: e.to_string(),
            },
        }
    }
}
