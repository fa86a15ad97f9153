use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent configuration; `key` is the dotted path.
    #[error("config error at `{key}`: {msg}")]
    Config { key: String, msg: String },

    /// An argument outside the domain of a formula.
    #[error("domain error: {0}")]
    Domain(String),

    /// Queue with utilization at or above one.
    #[error("unstable queue: utilization {0} >= 1")]
    Unstable(f64),

    #[error("{what} did not converge after {iterations} iterations")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
    },

    /// A checked acceptance property failed (for example bound dominance).
    #[error("property violated: {0}")]
    Property(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Property(_) => 2,
            Error::NoConvergence { .. } => 3,
            _ => 1,
        }
    }
}
