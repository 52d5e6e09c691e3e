use std::path::PathBuf;

use condenser_core::tensor::BlobError;

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

/// Why a checkpoint file was rejected.
#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    Version(u32),
    #[error("content digest mismatch")]
    Digest,
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("embedded architecture is invalid: {0}")]
    InvalidSpec(String),
}

impl CheckpointError {
    pub fn code(&self) -> &'static str {
        match self {
            CheckpointError::BadMagic(_) | CheckpointError::Corrupt(_) => "checkpoint.corrupt",
            CheckpointError::Version(_) => "checkpoint.version",
            CheckpointError::Digest => "checkpoint.digest",
            CheckpointError::InvalidSpec(_) => "checkpoint.invalid_spec",
        }
    }
}

impl From<BlobError> for CheckpointError {
    fn from(e: BlobError) -> Self {
        CheckpointError::Corrupt(format!("tensor blob: {e}"))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] condenser_core::Error),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("training diverged at epoch {epoch}, step {step} (loss {loss})")]
    Divergence { epoch: usize, step: usize, loss: f64 },
    #[error("{0}")]
    Usage(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        HarnessError::Json {
            context: context.into(),
            source,
        }
    }

    /// Stable dotted identifier used in machine-readable error lines.
    pub fn code(&self) -> &'static str {
        use condenser_core::Error as E;
        match self {
            HarnessError::Core(e) => match e {
                E::InvalidSpec(_) => "spec.invalid",
                E::Search(_) => "explore.failed",
                E::Blob(_) => "blob.corrupt",
                E::ShapeMismatch { .. } | E::LengthMismatch { .. } | E::InvalidShape { .. } => "shape",
                E::NonFinite { .. } => "non_finite",
                E::InvalidArgument(_) => "argument",
            },
            HarnessError::Checkpoint(e) => e.code(),
            HarnessError::Io { .. } => "io",
            HarnessError::Json { .. } => "json",
            HarnessError::Image { .. } => "image",
            HarnessError::Dataset(_) => "dataset",
            HarnessError::Divergence { .. } => "train.diverged",
            HarnessError::Usage(_) => "usage",
            HarnessError::Csv(_) => "csv",
        }
    }
}
