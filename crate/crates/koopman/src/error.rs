/// Error type shared by the whole crate.
///
/// The variants map onto the failure classes the library distinguishes:
/// caller mistakes (`DimensionMismatch`, `NonFinite`, `InvalidArgument`,
/// `Unsupported`, `Parse`), numerical breakdowns (`Numerical`, `BlowUp`)
/// and plain I/O.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("trajectory blow-up at step {step}")]
    BlowUp { step: usize },
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by bad inputs rather than numerical trouble.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::DimensionMismatch(_)
                | Error::NonFinite(_)
                | Error::InvalidArgument(_)
                | Error::Unsupported(_)
                | Error::Parse(_)
                | Error::Io(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
