//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RollError {
    /// A point left the valid domain of a chart backend (e.g. the half-plane
    /// with non-positive height). Carries the integration time when raised
    /// from a path operation, `f64::NAN` otherwise.
    #[error("point outside chart domain at t = {time}: {detail}")]
    Domain { time: f64, detail: String },

    /// The requested operation is not defined for this manifold backend.
    #[error("unsupported backend for {op}: {backend}")]
    UnsupportedBackend { op: &'static str, backend: String },

    /// Frame construction from rank-deficient input columns.
    #[error("degenerate frame: input columns are not linearly independent")]
    DegenerateFrame,

    /// A time argument fell outside the sampled grid.
    #[error("time {t} outside grid range [{lo}, {hi}]")]
    Range { t: f64, lo: f64, hi: f64 },

    /// An integral was requested against a path of the wrong kind
    /// (Riemann-Stieltjes against a local martingale, for instance).
    #[error("wrong integral kind: {0}")]
    WrongIntegralKind(String),

    /// A path operation needed a role the path does not carry.
    #[error("path role mismatch: expected {expected}, got {got}")]
    PathRole { expected: &'static str, got: String },

    /// A semimartingale operation needs the martingale/finite-variation split.
    #[error("missing semimartingale decomposition")]
    MissingDecomposition,

    /// Two paths that must share a grid do not.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Consecutive points are too far apart to invert the frame map.
    #[error("step {index} too large to lift (|dx| = {len:.3e})")]
    StepTooLarge { index: usize, len: f64 },

    /// Jump rate overflow in a measure family; reports the smallest epsilon
    /// the family supports.
    #[error("jump rate overflow at eps = {eps}; family usable for eps >= {eps_floor:.4}")]
    Saturation { eps: f64, eps_floor: f64 },

    /// A jump measure whose mean-jump integral does not converge.
    #[error("jump measure not integrable: {0}")]
    NonIntegrable(String),

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("serialization: {0}")]
    Serialize(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, RollError>;
