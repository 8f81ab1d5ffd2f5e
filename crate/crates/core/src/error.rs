use std::path::PathBuf;

/// Errors surfaced by every module of the lab.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("function values outside [-10, 10] ({0}); refusing to apply the Bellman operator")]
    OutOfRange(f64),

    #[error("value iteration did not converge within {iterations} sweeps (last change {last_change:e})")]
    NoConvergence { iterations: usize, last_change: f64 },

    #[error("training diverged: loss grew from {initial:e} to {current:e}")]
    Divergence { initial: f64, current: f64 },

    #[error("LSVI iteration {iteration} failed: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("oracle not populated for {0}")]
    NotPopulated(&'static str),

    #[error("no sign change of psi(r) - r on [{lo:e}, {hi:e}]")]
    NoBracket { lo: f64, hi: f64 },

    #[error("empty valid subgrid: step {step} of order {order} along axis {axis} leaves no nodes")]
    EmptySubgrid { axis: usize, step: usize, order: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("malformed file {path:?}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
