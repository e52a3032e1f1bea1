use std::path::PathBuf;

/// Crate-wide error type.
///
/// The variants map onto the CLI's exit-code contract: `Invalid` and
/// `Data` are data/input errors, `Estimation` is a numerical failure.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument or domain invariant was violated by the caller.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// Input data is malformed or inconsistent (files, panels, corpora).
    #[error("data error: {0}")]
    Data(String),

    /// An estimator could not produce a result.
    #[error("estimation error: {0}")]
    Estimation(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Convenience constructor for the `Io` variant.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
