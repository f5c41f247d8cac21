use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum HsqError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A binary or text file does not follow its declared format.
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    /// Input violates a documented precondition.
    #[error("validation error: {0}")]
    Validation(String),

    /// NaN/Inf, singular systems, degenerate activations, divergence.
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("config error: {0}")]
    Config(String),

    /// Failure inside a named pipeline stage.
    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<HsqError>,
    },
}

impl HsqError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HsqError::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        HsqError::Format { path: path.into(), message: message.into() }
    }

    /// True for failures of the numerical kind (exit code 2 in the CLI).
    pub fn is_numerical(&self) -> bool {
        match self {
            HsqError::Numerical(_) => true,
            HsqError::Stage { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        HsqError::Stage { stage, source: Box::new(self) }
    }
}

pub type Result<T, E = HsqError> = std::result::Result<T, E>;
