use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value failed validation. `path` is the dotted field path.
    #[error("invalid configuration at `{path}`: {reason}")]
    Config { path: String, reason: String },

    #[error("config parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    /// Inputs outside an operation's domain (dimension mismatch, non-positive step, ...).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("numerical divergence at step {step}, particle {particle}: {what}")]
    Divergence {
        step: usize,
        particle: usize,
        what: String,
    },

    #[error("weight degeneracy at step {step}: no particle carries positive weight")]
    Degenerate { step: usize },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("MALA initialization failed: {0}")]
    Initialization(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(what: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Domain(format!(
            "{what}: expected dimension {expected}, got {got}"
        )));
    }
    Ok(())
}
