use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid record: {0}")]
    InvalidRecord(String),

    #[error("record too short: {samples} samples, need more than {required}")]
    ShortRecord { samples: usize, required: usize },

    #[error("insufficient pulses: found {found}, need at least {required}")]
    InsufficientPulses { found: usize, required: usize },

    #[error("degenerate waveform: {0}")]
    DegenerateWaveform(String),

    #[error("degenerate pulse: {0} samples, need at least 2")]
    DegeneratePulse(usize),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Divergence { epoch: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("incomplete prediction table: {0}")]
    IncompleteTable(String),

    #[error("envelope never reaches ratio {ratio} on the {side} side")]
    RatioNotReached { ratio: f64, side: &'static str },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("checkpoint format: {0}")]
    Format(String),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
