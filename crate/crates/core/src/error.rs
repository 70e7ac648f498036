use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown catalog id `{id}`; known: {known}")]
    UnknownCatalogId { id: String, known: String },

    #[error("model assumption violated: {0}")]
    AssumptionViolated(String),

    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),

    #[error("scale j={scale} cannot be resolved on this grid: {reason}")]
    ScaleUnresolved { scale: i32, reason: String },

    #[error("quadrature did not converge: estimate {estimate:.6e}, error {achieved:.3e} > requested {requested:.3e}")]
    QuadratureNonConvergence {
        estimate: f64,
        achieved: f64,
        requested: f64,
    },

    #[error("transform output is not real: imaginary residue {0:.3e} (relative RMS)")]
    NonRealOutput(f64),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown config keys: {}", .0.join(", "))]
    UnknownConfigKeys(Vec<String>),

    #[error("malformed path file: {0}")]
    MalformedFile(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
