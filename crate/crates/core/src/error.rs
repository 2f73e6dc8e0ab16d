use std::path::PathBuf;

/// Errors produced by the audit toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot read {path} as 16-bit mono PCM WAVE: {reason}")]
    Wav { path: PathBuf, reason: String },

    #[error("invalid waveform: {0}")]
    InvalidWaveform(String),

    #[error("input too short: {0}")]
    TooShort(String),

    #[error("loudness is unmeasurable: {0}")]
    Unmeasurable(String),

    #[error("signal has zero power, SNR is undefined: {0}")]
    ZeroPower(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },

    #[error("duplicate utterance id `{0}`")]
    DuplicateId(String),

    #[error("unknown utterance id `{0}`")]
    UnknownId(String),

    #[error("record `{0}` is not an evaluation trial")]
    NotEvalRecord(String),

    #[error("degenerate training data: dimension {dim} has zero variance")]
    DegenerateDimension { dim: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("rank-deficient design matrix: {0}")]
    RankDeficient(String),

    #[error("need at least one score of each class (bona fide: {bona}, spoof: {spoof})")]
    SingleClass { bona: usize, spoof: usize },

    #[error("cannot normalize group `{0}`: {1}")]
    DegenerateGroup(String, String),

    #[error("model file {path}: {reason}")]
    ModelFormat { path: String, reason: String },

    #[error("external codec failed: {0}")]
    ExternalCodec(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
