use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Rejections raised while validating a single token distribution.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistributionError {
    #[error("token distribution is empty")]
    Empty,
    #[error("token distribution has {len} candidates, at most {max} allowed")]
    TooManyCandidates { len: usize, max: usize },
    #[error("probability at index {index} is negative ({value})")]
    NegativeProbability { index: usize, value: f64 },
    #[error("probability at index {index} is not a finite value in [0, 1] ({value})")]
    OutOfRange { index: usize, value: f64 },
    #[error("probabilities sum to {sum}, which cannot be renormalized to 1")]
    NotNormalized { sum: f64 },
}

/// Failures reading a serialized model file.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelFileError {
    #[error("bad magic bytes, not a model file")]
    BadMagic,
    #[error("unsupported model file version {0}")]
    UnsupportedVersion(u32),
    #[error("model file is truncated")]
    Truncated,
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("malformed model file: {0}")]
    Malformed(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Distribution(#[from] DistributionError),

    #[error("{op}: dimension mismatch between {left:?} and {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{0}")]
    Validation(String),

    #[error("line {line}: {message}")]
    Record { line: usize, message: String },

    #[error("non-finite {what} in tensor `{tensor}`")]
    NonFinite { tensor: String, what: &'static str },

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },

    #[error("equivalence oracle failed on pair ({left}, {right}): {message}")]
    Oracle {
        left: usize,
        right: usize,
        message: String,
    },

    #[error(transparent)]
    ModelFile(#[from] ModelFileError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn dims(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Dimension {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    /// True for failures of the environment (files, processes) rather than of the data.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_))
    }
}
