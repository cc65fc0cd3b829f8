//! Crate-wide error type.

use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure category, used by the command line tools to pick an exit
/// code: usage problems (2), bad or missing data (3), numerical failures (4).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}

#[derive(Debug)]
pub enum Error {
    /// Empty input signal where at least one sample is required.
    EmptySignal,
    /// Signal shorter than one analysis window.
    ClipTooShort { samples: usize, window: usize },
    /// Autocorrelation with no energy (r[0] <= 0); no LPC solution exists.
    DegenerateFrame,
    /// Root finding did not reach the residual tolerance; carries the best
    /// iterate as (re, im) pairs so callers can still inspect it.
    RootsDidNotConverge { residual: f64, iterations: usize, best: Vec<(f64, f64)> },
    /// Tensor or parameter shape disagreement, with a description of both sides.
    ShapeMismatch(String),
    /// An operation that reduces over valid frames was given none.
    NoValidFrames,
    /// A parameter is outside its documented range.
    InvalidParam(String),
    /// Utterance longer than the fixed maximum frame count.
    UtteranceTooLong { frames: usize, max: usize },
    /// Empty data set where at least one utterance is required.
    EmptyDataset,
    /// Phone labels missing from the class map.
    UnmappedPhones(Vec<String>),
    /// Loss became non-finite during training.
    NonFiniteLoss { epoch: usize, batch: usize },
    /// A gradient became non-finite, identified by parameter name.
    NonFiniteGrad { tensor: String },
    /// Finite-difference verification found gradients outside tolerance.
    GradcheckFailed { failed: usize, total: usize },
    /// File does not start with the expected magic bytes.
    BadMagic { expected: &'static str },
    /// File format version not understood.
    VersionMismatch { found: u32, supported: u32 },
    /// Serialized tensor does not match the shape derived from the config.
    WeightShapeMismatch { tensor: String, expected: Vec<usize>, found: Vec<usize> },
    /// File ends before the declared payload.
    TruncatedFile { needed: u64, found: u64 },
    /// Malformed text input (CSV, manifest, config, class map).
    Parse(String),
    /// Unsupported audio encoding.
    UnsupportedWav(String),
    /// Sample rate differs from the configured one.
    SampleRateMismatch { found: u32, expected: u32 },
    Io(std::io::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        use Error::*;
        match self {
            InvalidParam(_) => ErrorKind::Usage,
            RootsDidNotConverge { .. }
            | NonFiniteLoss { .. }
            | NonFiniteGrad { .. }
            | GradcheckFailed { .. } => ErrorKind::Numerical,
            _ => ErrorKind::Data,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Error::*;
        match self {
            EmptySignal => write!(f, "empty signal"),
            ClipTooShort { samples, window } => {
                write!(f, "clip of {samples} samples is shorter than one {window}-sample window")
            }
            DegenerateFrame => write!(f, "degenerate frame"),
            RootsDidNotConverge { residual, iterations, .. } => {
                write!(f, "root finding stalled after {iterations} iterations (residual {residual:.3e})")
            }
            ShapeMismatch(msg) => write!(f, "shape mismatch: {msg}"),
            NoValidFrames => write!(f, "no valid frames"),
            InvalidParam(msg) => write!(f, "invalid parameter: {msg}"),
            UtteranceTooLong { frames, max } => {
                write!(f, "utterance of {frames} frames exceeds the maximum of {max}")
            }
            EmptyDataset => write!(f, "empty dataset"),
            UnmappedPhones(labels) => {
                write!(f, "phone labels missing from class map: {}", labels.join(", "))
            }
            NonFiniteLoss { epoch, batch } => {
                write!(f, "non-finite loss at epoch {epoch}, batch {batch}")
            }
            NonFiniteGrad { tensor } => write!(f, "non-finite gradient in tensor {tensor}"),
            GradcheckFailed { failed, total } => {
                write!(f, "gradient check failed on {failed} of {total} entries")
            }
            BadMagic { expected } => write!(f, "bad magic: expected {expected}"),
            VersionMismatch { found, supported } => {
                write!(f, "format version {found} not supported (expected {supported})")
            }
            WeightShapeMismatch { tensor, expected, found } => {
                write!(f, "shape mismatch for tensor {tensor}: expected {expected:?}, found {found:?}")
            }
            TruncatedFile { needed, found } => {
                write!(f, "truncated file: needed {needed} bytes, found {found}")
            }
            Parse(msg) => write!(f, "parse error: {msg}"),
            UnsupportedWav(msg) => write!(f, "unsupported wav: {msg}"),
            SampleRateMismatch { found, expected } => {
                write!(f, "sample rate {found} Hz differs from expected {expected} Hz")
            }
            Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}
