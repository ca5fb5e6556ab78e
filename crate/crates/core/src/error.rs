use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A mathematical precondition was violated (empty input, dimension
    /// mismatch, out-of-range parameter, non-finite value).
    #[error("domain error: {0}")]
    Domain(String),

    /// Catalog construction or lookup failed.
    #[error("catalog error: {0}")]
    Catalog(String),

    /// Configuration text failed validation; all problems are collected.
    #[error("config error:\n{}", .0.join("\n"))]
    Config(Vec<String>),

    /// A simulation produced non-finite state and was aborted.
    #[error("divergence: {0}")]
    Divergence(String),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
