use thiserror::Error;

/// Errors raised by the library.
///
/// Variants split into input problems ([`Error::is_validation`]) and
/// numerical failures so that front ends can map them to distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid dataset: {0}")]
    Dataset(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unknown lot '{0}'")]
    UnknownLot(String),
    #[error("singular or degenerate system: {0}")]
    Singular(String),
    #[error("optimizer did not converge: {0}")]
    NonConvergence(String),
    #[error("Satterthwaite DDF unavailable: {0}")]
    SattUnavailable(String),
    #[error("asymptotic covariance unavailable: {0}")]
    AsyCovUnavailable(String),
    #[error("no crossing in bracket [{lo}, {hi}]")]
    NoCrossing { lo: f64, hi: f64 },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by bad input rather than numerical trouble.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Dataset(_)
                | Error::InvalidArgument(_)
                | Error::UnknownLot(_)
                | Error::Io(_)
                | Error::Csv(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
