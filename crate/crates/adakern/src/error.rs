use std::path::PathBuf;

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    pub const INPUT: u8 = 1;
    pub const VERIFICATION: u8 = 2;
    pub const SOLVER: u8 = 3;
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: {message}", path.display())]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{0}")]
    Config(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("solver failed: {0}")]
    Solver(adakern_core::Error),
    #[error(transparent)]
    Core(#[from] adakern_core::Error),
    #[error("cannot write output: {0}")]
    Output(String),
}

impl Error {
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Verification(_) => exit::VERIFICATION,
            Error::Solver(_) => exit::SOLVER,
            _ => exit::INPUT,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), line, message: message.into() }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Output(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Output(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
