use std::path::PathBuf;

use nfsdf_core::Error as CoreError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("{0}")]
    Data(String),

    #[error("{path} already exists; pass --force to overwrite")]
    Exists { path: PathBuf },

    #[error(transparent)]
    Core(#[from] CoreError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Self::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// Process exit code: 1 usage, 2 data, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 1,
            Self::Core(e) if is_numerical(e) => 3,
            _ => 2,
        }
    }
}

fn is_numerical(e: &CoreError) -> bool {
    matches!(
        e,
        CoreError::NonFinite(_)
            | CoreError::Diverged { .. }
            | CoreError::InversionFailed { .. }
            | CoreError::NonFiniteField { .. }
            | CoreError::RankDeficient
            | CoreError::Degenerate(_)
    )
}
