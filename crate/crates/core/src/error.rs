use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Whether an error came from bad input/configuration or from data that
/// disagrees with itself (misaligned channels, length mismatches).
///
/// The CLI maps these onto distinct exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Input,
    Consistency,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("operation too short: {seconds:.3} s (need at least 1 s)")]
    OperationTooShort { seconds: f64 },

    #[error("sample-rate mismatch: {0} Hz vs {1} Hz")]
    SampleRateMismatch(u32, u32),

    #[error("degenerate signal: {0}")]
    DegenerateSignal(&'static str),

    #[error("band too narrow for fft_size {fft_size}: [{f_lo}, {f_hi}] Hz contains no bin centers")]
    BandTooNarrow { f_lo: f64, f_hi: f64, fft_size: usize },

    #[error("non-overlapping channels: lag {lag_s:.3} s vs shortest duration {duration_s:.3} s")]
    NonOverlapping { lag_s: f64, duration_s: f64 },

    #[error("cannot rebase: {0}")]
    CannotRebase(&'static str),

    #[error("unrecognized format: {0}")]
    UnrecognizedFormat(String),

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("corrupt features: {0}")]
    CorruptFeatures(String),

    #[error("misaligned operation {operation}: {detail}")]
    Misaligned { operation: String, detail: String },

    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },

    #[error("phase never observed: {0}")]
    PhaseNeverObserved(usize),

    #[error("too few operations: {got} (need at least {needed})")]
    TooFewOperations { needed: usize, got: usize },

    #[error("no forward pass recorded for node {0}")]
    NoForwardPass(usize),

    #[error("missing parameter `{0}`")]
    MissingParameter(String),

    #[error("missing channel `{0}`")]
    MissingChannel(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Misaligned { .. } | Error::Shape(_) | Error::LabelOutOfRange { .. } => {
                ErrorKind::Consistency
            }
            _ => ErrorKind::Input,
        }
    }
}
