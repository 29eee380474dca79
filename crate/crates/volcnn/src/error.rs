use std::path::{Path, PathBuf};

/// Errors of the file-backed layer. Core errors pass through unchanged.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] volcnn_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("configuration: {0}")]
    Config(String),
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),
    #[error("results store {0} holds no results")]
    EmptyStore(PathBuf),
    #[error("leakage: {0}")]
    Leakage(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        let path = path.as_ref().to_path_buf();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub fn parse(path: impl AsRef<Path>, message: impl ToString) -> Self {
        Error::Parse { path: path.as_ref().to_path_buf(), message: message.to_string() }
    }

    /// Stable kind tag for structured error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Core(_) => "DataError",
            Error::Io { .. } => "IoError",
            Error::MissingFile(_) => "MissingFile",
            Error::Parse { .. } => "ParseError",
            Error::Config(_) => "ConfigError",
            Error::CheckpointMismatch(_) => "CheckpointMismatch",
            Error::EmptyStore(_) => "EmptyStore",
            Error::Leakage(_) => "Leakage",
        }
    }

    /// Process exit code; 2 is left to argument-parsing failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config(_) => 3,
            Error::Io { .. } | Error::MissingFile(_) => 4,
            Error::Parse { .. } => 5,
            Error::Core(_) => 6,
            Error::CheckpointMismatch(_) => 7,
            Error::EmptyStore(_) => 8,
            Error::Leakage(_) => 9,
        }
    }
}

/// Reads a whole file, mapping errors to [`Error::io`].
pub(crate) fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes via a temporary sibling and a rename so readers never see a partial file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
