use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or infeasible configuration (modulus mismatch, infeasible
    /// coding parameters, bad evaluation points, malformed config files).
    #[error("configuration error: {0}")]
    Config(String),

    /// An argument outside the domain of an operation (shape mismatch,
    /// inverse of zero, duplicate interpolation nodes, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A signed integer does not fit the signed view of the field.
    #[error("capacity overflow: |{value}| does not fit below (p-1)/2 = {half}")]
    CapacityOverflow { value: String, half: String },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed record: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        match err.kind() {
            csv::ErrorKind::Io(_) => match err.into_kind() {
                csv::ErrorKind::Io(io) => Error::Io(io),
                _ => unreachable!(),
            },
            _ => Error::Format(err.to_string()),
        }
    }
}
