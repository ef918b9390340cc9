use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("malformed map: {0}")]
    MalformedMap(String),
    #[error("step called on a terminal state")]
    SteppedTerminalState,
    #[error("shape mismatch for {what}: expected {expected}, got {got}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("parameter vector has length {got}, network needs {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("invalid layer spec: {0}")]
    InvalidSpec(String),
    #[error("replay buffer holds {available} transitions, batch needs {requested}")]
    InsufficientSamples { available: usize, requested: usize },
    #[error("particle weights sum to {0}, expected 1")]
    UnnormalizedWeights(f64),
    #[error("all particle weights vanished")]
    DegenerateWeights,
    #[error("innovation variance {0} is not positive")]
    NonPositiveInnovationVariance(f64),
    #[error("paths are misaligned: {0}")]
    MisalignedPaths(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("usage: {0}")]
    Usage(String),
    #[error("no completed run found in {0}")]
    MissingRun(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
