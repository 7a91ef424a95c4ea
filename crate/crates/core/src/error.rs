use std::path::PathBuf;

/// Errors raised anywhere in the library.
///
/// Each variant maps onto one of the process exit codes used by the
/// `histoexpr` binary (see [`Error::exit_code`]).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left} vs {right}")]
    Shape {
        op: &'static str,
        left: String,
        right: String,
    },

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("zero-sum rows cannot be normalized: {}", spots.join(","))]
    ZeroSumRows { spots: Vec<String> },

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("hash mismatch for {what}: expected {expected}, found {found}")]
    HashMismatch {
        what: String,
        expected: String,
        found: String,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        Error::Shape {
            op,
            left: format!("{}x{}", left.0, left.1),
            right: format!("{}x{}", right.0, right.1),
        }
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } | Error::Validation(_) | Error::ZeroSumRows { .. } => "validation",
            Error::Io { .. } | Error::Format { .. } | Error::HashMismatch { .. } => "io",
            Error::Numerical(_) => "numerical",
        }
    }

    /// Process exit code: 3 io/format, 4 validation, 5 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            "io" => 3,
            "validation" => 4,
            _ => 5,
        }
    }
}
