use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("waveform synthesis failed: {0}")]
    Synthesis(String),

    #[error("integration failed: relative norm drift {drift:.3e} exceeds tolerance")]
    Integration { drift: f64 },

    #[error("trajectory {index} failed: {source}")]
    Trajectory {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("degenerate distance fit: {0}")]
    DegenerateFit(String),

    #[error("numerical inversion failed: condition number {cond:.3e} above limit")]
    Inversion { cond: f64 },

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
