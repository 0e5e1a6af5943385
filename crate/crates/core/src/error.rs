//! Error types shared across the toolkit.

use std::path::PathBuf;

use thiserror::Error;

/// Errors raised while reading or writing raw video containers.
#[derive(Debug, Error)]
pub enum VideoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed y4m header at byte {offset}: {reason}")]
    MalformedHeader { offset: u64, reason: String },
    #[error("unsupported chroma tag `{tag}` at byte {offset}")]
    UnsupportedChroma { offset: u64, tag: String },
    #[error("truncated frame {frame} at byte {offset}: expected {expected} payload bytes, found {found}")]
    Truncated {
        frame: usize,
        offset: u64,
        expected: usize,
        found: usize,
    },
    #[error("malformed frame marker for frame {frame} at byte {offset}")]
    MalformedFrame { frame: usize, offset: u64 },
    #[error("non-finite sample in frame {frame}, plane {plane}, index {index}")]
    NonFinite {
        frame: usize,
        plane: usize,
        index: usize,
    },
    #[error("layout {0:?} cannot be stored in a y4m container")]
    UnwritableLayout(crate::frame_io::PixLayout),
    #[error("invalid video: {0}")]
    Invalid(String),
}

/// Invalid low-pass parameters.
#[derive(Debug, Error, PartialEq)]
pub enum FilterError {
    #[error("gaussian ksize must be odd and >= 3, got {0}")]
    EvenOrSmallKernel(usize),
    #[error("gaussian sigma must be positive and finite, got {0}")]
    BadSigma(f64),
    #[error("kernel size {ksize} too large for a {width}x{height} plane")]
    KernelTooLarge {
        ksize: usize,
        width: usize,
        height: usize,
    },
    #[error("empty plane")]
    EmptyPlane,
    #[error("alpha must be finite, got {0}")]
    BadAlpha(f64),
}

#[derive(Debug, Error, PartialEq)]
pub enum SampleError {
    #[error("video has {have} frames, at least {need} required")]
    TooShort { have: usize, need: usize },
    #[error("plane {width}x{height} smaller than fragment side {need}")]
    TooSmall {
        width: usize,
        height: usize,
        need: usize,
    },
    #[error("invalid sampler config: {0}")]
    Config(String),
    #[error("trace does not match the video: {0}")]
    Trace(String),
    #[error(transparent)]
    Filter(#[from] FilterError),
}

/// Tensor shape and model structure errors.
#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("model config: {0}")]
    Config(String),
}

impl NnError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        NnError::Shape {
            op,
            detail: detail.into(),
        }
    }
}

/// Failures in the RD labeling harness.
#[derive(Debug, Error)]
pub enum LabelError {
    #[error("command `{command}` exited with {status}: {stderr}")]
    CommandFailed {
        command: String,
        status: String,
        stderr: String,
    },
    #[error("command `{command}` timed out after {secs} s")]
    Timeout { command: String, secs: u64 },
    #[error("could not start `{command}`: {source}")]
    Spawn {
        command: String,
        #[source]
        source: std::io::Error,
    },
    #[error("template `{0}` is empty or unparsable")]
    BadTemplate(String),
    #[error("template is missing placeholder {{{0}}}")]
    MissingPlaceholder(&'static str),
    #[error("encoder produced an empty file at {0}")]
    EmptyOutput(PathBuf),
    #[error("metric output `{0}` is not a number")]
    NonNumericMetric(String),
    #[error("no curve for strategy {0}")]
    MissingStrategy(f64),
    #[error("RD curve needs at least 2 distinct bitrates, got {0}")]
    DegenerateCurve(usize),
    #[error("invalid label job spec: {0}")]
    Spec(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Video(#[from] VideoError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("correlation undefined: {0} sequence is constant")]
    ConstantSequence(&'static str),
    #[error("length mismatch: {0} predictions vs {1} ground truth values")]
    LengthMismatch(usize, usize),
    #[error("need at least {need} pairs, got {have}")]
    TooFew { need: usize, have: usize },
    #[error("non-finite score at index {0}")]
    NonFinite(usize),
    #[error("cutoff fraction must lie in (0, 1), got {0}")]
    BadCutoff(f64),
}

/// Configuration and manifest errors; `key` names the offending config path.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: parse error at line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("invalid `{key}`: {message}")]
    Invalid { key: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest {path}: {message}")]
    Manifest { path: String, message: String },
}

impl ConfigError {
    pub(crate) fn invalid(key: &str, message: impl Into<String>) -> Self {
        ConfigError::Invalid {
            key: key.to_string(),
            message: message.into(),
        }
    }

    /// The config key path responsible for a validation failure.
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::Invalid { key, .. } => Some(key),
            _ => None,
        }
    }
}

/// Errors from training and inference drivers.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("empty training set")]
    EmptyDataset,
    #[error("entry `{0}` has no strategy label")]
    Unlabeled(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Video(#[from] VideoError),
    #[error("{0}")]
    Invalid(String),
}
