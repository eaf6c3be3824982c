use thiserror::Error;

/// Errors raised by the toolkit. Variant messages are stable: the CLI
/// forwards them verbatim.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("non-finite sample at {0}")]
    NonFiniteSample(String),
    #[error("non-positive speed of sound: {0}")]
    NonPositiveSpeed(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular matrix: Cholesky pivot {pivot:e} at row {row}")]
    SingularMatrix { row: usize, pivot: f64 },
    #[error("singular covariance at pixel ({ix}, {iz})")]
    SingularCovariance { ix: usize, iz: usize },
    #[error("no convergence after {sweeps} Jacobi sweeps")]
    NoConvergence { sweeps: usize },
    #[error("adjoint mismatch: |<Ax,y> - <x,A^H y>| = {residual:e}")]
    AdjointMismatch { residual: f64 },
    #[error("step too large: objective increased from {before:e} to {after:e} at iteration {iteration}")]
    StepTooLarge {
        iteration: usize,
        before: f64,
        after: f64,
    },

    #[error("depth exceeds window: latest echo at sample {needed:.1}, window has {available} samples")]
    DepthExceedsWindow { needed: f64, available: usize },
    #[error("empty events: at least one transmit event is required")]
    EmptyEvents,

    #[error("all-zero envelope")]
    AllZeroEnvelope,
    #[error("no peak: profile has no positive global maximum")]
    NoPeak,
    #[error("half level not crossed on the {0} side of the peak")]
    HalfLevelNotCrossed(&'static str),
    #[error("empty region: {0}")]
    EmptyRegion(String),
    #[error("zero mean in reference region")]
    ZeroMeanB,
    #[error("zero variance in both regions")]
    ZeroVarianceBoth,

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
