//! Crate-wide error type.

use std::path::PathBuf;

/// All failure modes surfaced by this crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Buffer or image dimensions do not match what an operation requires.
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    /// A numeric argument or buffer value is outside its allowed domain.
    #[error("value out of range in {context}: {detail}")]
    OutOfRange {
        context: &'static str,
        detail: String,
    },

    /// A configuration struct failed validation.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A velocity evaluation produced NaN or infinity during an edit loop.
    /// `step` is the schedule index i (counting down from n_max) at which the
    /// blow-up occurred.
    #[error("non-finite velocity at schedule step {step} (t = {t})")]
    NonFiniteVelocity { step: usize, t: f64 },

    /// Training loss became NaN or infinity.
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        loss: f64,
    },

    /// The Gaussian posterior is undefined because t = 0 and the data
    /// standard deviation is 0 simultaneously.
    #[error("degenerate posterior: t = 0 with zero data standard deviation")]
    DegeneratePosterior,

    /// Guidance weight != 1 requested from a model without an unconditional
    /// branch.
    #[error("model has no unconditional branch but guidance weight {weight} != 1 was requested")]
    NoUnconditionalSupport { weight: f64 },

    /// A dataset operation was given no records.
    #[error("empty dataset")]
    EmptyDataset,

    /// A metric has no defined value for these inputs.
    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),

    /// A scene edit cannot be applied to the given scene.
    #[error("edit not applicable: {0}")]
    EditNotApplicable(String),

    /// Unknown preset name.
    #[error("unknown preset {0:?} (expected one of: mild-texture, appearance, local-geometry, large-geometry)")]
    UnknownPreset(String),

    /// Filesystem failure, annotated with the path involved.
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Image decode/encode failure, annotated with the path involved.
    #[error("image error at {path}: {message}")]
    Image { path: PathBuf, message: String },

    /// Malformed serialized artifact (manifest, checkpoint, report, config).
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Helper for I/O errors carrying their path.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
