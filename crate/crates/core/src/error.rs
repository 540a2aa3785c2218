use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Exhaustive enumeration would exceed the configured cap.
    #[error("capacity exceeded: C({n},{b}) = {count} exceeds the cap of {cap}")]
    Capacity {
        n: usize,
        b: usize,
        count: u128,
        cap: usize,
    },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    /// The contraction moment (or log-moment) is not below its threshold.
    #[error("not contractive: {what} = {value}")]
    NotContractive { what: &'static str, value: f64 },

    #[error("no root of the moment equation below the exponent cap {cap}")]
    NoRoot { cap: f64 },

    #[error("stability criterion violated: sigma2 * mu = {0} must be below 2")]
    StabilityViolation(f64),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("{context}: {source}")]
    Cell {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Attaches the name of the experiment cell that produced the error.
    pub fn in_cell(self, context: impl Into<String>) -> Self {
        Error::Cell {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping cell context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Cell { source, .. } => source.root(),
            other => other,
        }
    }
}
