use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library. The CLI maps these onto its exit-code contract.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (shape mismatch, bad parameter).
    #[error("contract violation: {0}")]
    Contract(String),
    /// Malformed or missing input data. `line` is 1-based; 0 means the whole file.
    #[error("{}", LoadDisplay(.file, *.line, .msg))]
    Load { file: PathBuf, line: usize, msg: String },
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}: {term} is not finite")]
    Divergence { epoch: usize, term: String },
    #[error("evaluation error: {0}")]
    Eval(String),
}

pub type Result<T> = std::result::Result<T, Error>;

struct LoadDisplay<'a>(&'a PathBuf, usize, &'a String);

impl fmt::Display for LoadDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.1 == 0 {
            write!(f, "{}: {}", self.0.display(), self.2)
        } else {
            write!(f, "{}:{}: {}", self.0.display(), self.1, self.2)
        }
    }
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn load(file: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Load {
            file: file.into(),
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
