use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("manifest not found at {0}")]
    MissingManifest(PathBuf),

    #[error("duplicate trace key ({subject}, {session}, {recording}) at {path}:{line}")]
    DuplicateTrace {
        subject: String,
        session: String,
        recording: u32,
        path: PathBuf,
        line: usize,
    },

    #[error("invalid trace: {0}")]
    InvalidTrace(String),

    #[error("degenerate split: {0}")]
    DegenerateSplit(String),

    #[error("invalid filter design: {0}")]
    FilterDesign(String),

    #[error("trace too short for filtering: {len} samples, need more than {needed}")]
    TraceTooShort { len: usize, needed: usize },

    #[error("segmentation: {0}")]
    Segmentation(String),

    #[error("feature model: {0}")]
    Features(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid training set: {0}")]
    InvalidTrainingSet(String),

    #[error("invalid hyperparameter: {0}")]
    InvalidParameter(String),

    #[error("solver did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("infeasible stratification: {0}")]
    Stratification(String),

    #[error("evaluation: {0}")]
    Evaluation(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{stage} stage: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attributes an error to a pipeline stage.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
