use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller supplied inconsistent or out-of-range arguments.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A scenario specification that cannot be realised.
    #[error("invalid scenario: {0}")]
    Spec(String),

    /// NaN/Inf iterates, failed factorizations and similar.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The dual certificate construction hit a vanishing block sum.
    #[error("degenerate certificate: block sum t_({l},{k}) = {value:e} is numerically zero")]
    DegenerateCertificate { l: usize, k: usize, value: f64 },

    #[error("malformed input at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }
}
