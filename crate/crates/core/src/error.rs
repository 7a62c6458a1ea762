use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no trajectory records supplied")]
    EmptyRecords,

    #[error("duplicate record for frame {frame}, agent {agent}: ({x1}, {y1}) and ({x2}, {y2})")]
    DuplicateRecord {
        frame: usize,
        agent: usize,
        x1: f64,
        y1: f64,
        x2: f64,
        y2: f64,
    },

    #[error("non-finite coordinate at frame {frame}, agent {agent}")]
    NonFiniteCoordinate { frame: usize, agent: usize },

    #[error("scene needs at least 2 agents, found {0}")]
    TooFewAgents(usize),

    #[error("scene needs at least 2 frames, found {0}")]
    TooFewFrames(usize),

    #[error("agent {agent} is absent at frame {frame} between observed frames")]
    NonContiguousPresence { agent: usize, frame: usize },

    #[error("agent {0} has no observations")]
    AgentWithoutObservations(usize),

    #[error("invalid sample: {0}")]
    InvalidSample(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{context}: expected dimension {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("activation trace does not belong to this network (trace version {trace}, network version {net})")]
    StaleTrace { trace: u64, net: u64 },

    #[error("non-finite gradient in network '{net}', layer {layer}")]
    NonFiniteGradient { net: String, layer: usize },

    #[error("non-finite logit for key {index}")]
    NonFiniteLogit { index: usize },

    #[error("sampling horizon {horizon} exceeds prediction length {pred_len}")]
    HorizonTooLong { horizon: usize, pred_len: usize },

    #[error("horizon offset {delta_t} outside 1..={horizon}")]
    HorizonOffset { delta_t: usize, horizon: usize },

    #[error("key bundles do not cover offsets 1..={horizon}: {found:?}")]
    BundleMismatch { horizon: usize, found: Vec<usize> },

    #[error("trajectory length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },

    #[error("{0} is empty")]
    Empty(&'static str),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("pred_len mismatch: checkpoint has {checkpoint}, data configuration has {data}")]
    PredLenMismatch { checkpoint: usize, data: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("all {0} sweep trials failed")]
    AllTrialsFailed(usize),

    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn file(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::File {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
