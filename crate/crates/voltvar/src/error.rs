use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("network is disconnected: bus {bus} is unreachable from the substation")]
    Disconnected { bus: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Reduced admittance could not be inverted. `diagnostic` carries a pivot-ratio
    /// estimate so the caller can tell "singular" from "merely awful".
    #[error("singular matrix: {context} ({diagnostic})")]
    Singular { context: String, diagnostic: String },

    #[error("fixed-point iteration stalled after {iterations} iterations, residual {residual:.3e}")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
