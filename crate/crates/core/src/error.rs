use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, layouts or sizes that do not fit together.
    #[error("configuration error: {0}")]
    Config(String),

    /// The caller asked for something that makes no sense (empty sets, zero counts).
    #[error("usage error: {0}")]
    Usage(String),

    /// A non-finite value appeared while evaluating layer `layer`.
    #[error("numeric error in layer {layer}: {detail}")]
    Numeric { layer: usize, detail: String },

    /// An iterative run blew up; the trace up to the failure is kept.
    #[error("run aborted at iteration {iteration}: {reason}")]
    Diverged {
        iteration: usize,
        reason: String,
        trace: Vec<crate::trace::TraceRow>,
    },

    /// The iADM monitor kept rejecting steps.
    #[error("step constants overflowed after {rejections} consecutive rejected steps")]
    StepOverflow { rejections: usize },

    #[error("failed to parse {path}: {detail}")]
    Parse { path: String, detail: String },

    #[error("dataset format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }
}
