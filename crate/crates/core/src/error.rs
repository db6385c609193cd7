use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is not positive semi-definite: {0}")]
    NotPositiveSemiDefinite(String),
    #[error("design matrix is rank deficient: {0}")]
    RankDeficient(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    ///
    /// 2 covers configuration and validation problems, 3 covers numerical
    /// failures (indefinite matrices, singular designs, degenerate variances).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NotPositiveSemiDefinite(_) | Error::RankDeficient(_) | Error::Numerical(_) => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
