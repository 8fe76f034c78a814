use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to decode audio {path}: {reason}")]
    Audio { path: PathBuf, reason: String },
    #[error("unsupported audio encoding in {path}: {reason}")]
    UnsupportedEncoding { path: PathBuf, reason: String },
    #[error("zero-length audio: {0}")]
    EmptyAudio(String),
    #[error("clip {recording_id} has {samples} samples, fewer than one frame ({frame} samples)")]
    ClipTooShort {
        recording_id: String,
        samples: usize,
        frame: usize,
    },
    #[error("bad binary file {path}: {reason}")]
    BadFormat { path: PathBuf, reason: String },
    #[error("no precomputed embeddings for recording {0}")]
    MissingEmbedding(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("unknown class {0:?}")]
    UnknownClass(String),
    #[error("unknown recording {0:?}")]
    UnknownRecording(String),
    #[error("unknown segment {0}")]
    UnknownSegment(u32),
    #[error("no annotated segments to propagate labels from")]
    NoAnnotations,
    #[error("the unlabeled pool is empty")]
    EmptyPool,
    #[error("a batch is already open ({0} segments pending)")]
    BatchOpen(usize),
    #[error("segment {0} is not in the open batch")]
    NotInBatch(u32),
    #[error("segment {0} is already annotated")]
    AlreadyAnnotated(u32),
    #[error("strategy {0} requires model predictions")]
    MissingPredictions(&'static str),
    #[error("empty pooling region")]
    EmptyRegion,
    #[error("region [{start}, {end}) outside sequence of length {len}")]
    RegionOutOfBounds { start: usize, end: usize, len: usize },
    #[error("no annotated regions to train on")]
    NoTrainingData,
    #[error("non-finite loss at epoch {epoch}: {detail}")]
    NonFiniteLoss { epoch: usize, detail: String },
    #[error("event [{onset}, {offset}) outside recording of {duration} s")]
    EventOutOfBounds {
        onset: f64,
        offset: f64,
        duration: f64,
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("event of {event_s} s does not fit in a {recording_s} s recording")]
    InfeasiblePlacement { event_s: f64, recording_s: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
