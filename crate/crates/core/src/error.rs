use thiserror::Error;

/// Errors surfaced by the library.
///
/// Malformed policy behaviour during rollouts (bad tool arguments, missing
/// answers) is never an error; it is recorded in the trajectory instead.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates its documented invariant.
    #[error("configuration error: {0}")]
    Config(String),

    /// Knowledge-graph construction failed.
    #[error("construction error: {0}")]
    Construction(String),

    /// An operation was called outside its contract.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A non-finite value showed up in parameters or log-probabilities.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Arguments outside the mathematical domain of an estimator.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
