use std::fmt;

/// Errors produced by the library and mapped onto CLI exit codes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unsupported activation exponent {0}; only 0 (step) and 1 (ReLU) are available")]
    UnsupportedActivation(u32),

    #[error("non-finite kernel entries{}", LayerSuffix(*.layer))]
    Overflow { layer: Option<usize> },

    #[error("matrix is not positive definite after jitter (smallest eigenvalue ~ {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    /// A numerical check or run failed as a whole.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("{0}")]
    Usage(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

struct LayerSuffix(Option<usize>);

impl fmt::Display for LayerSuffix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(layer) => write!(f, " at layer {layer}"),
            None => Ok(()),
        }
    }
}

impl Error {
    /// Process exit code: 2 usage, 3 data, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Usage(_) | Error::UnsupportedActivation(_) => 2,
            Error::Data(_) | Error::Shape(_) | Error::Io { .. } => 3,
            Error::Overflow { .. } | Error::NotPositiveDefinite { .. } | Error::Numeric(_) => 4,
        }
    }

    /// True for failures that come from floating-point trouble rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Overflow { .. } | Error::NotPositiveDefinite { .. })
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
