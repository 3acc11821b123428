use alloc::string::String;

/// Failure modes shared by every module of the crate.
///
/// Each variant maps to a stable, kebab-case code (see [`Error::code`]) which
/// the command line and file formats surface verbatim.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("empty-selection: no samples selected for moment computation")]
    EmptySelection,
    #[error("non-finite: {0}")]
    NonFinite(&'static str),
    #[error("bad-epsilon: eps must be > 0, got {0}")]
    BadEpsilon(f64),
    #[error("shape-mismatch: {0}")]
    ShapeMismatch(String),
    #[error("too-few-points: need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("empty-context: context {0} has no samples")]
    EmptyContext(usize),
    #[error("wrong-arity: expected {expected} contexts, got {got}")]
    WrongArity { expected: usize, got: usize },
    #[error("bad-context: index {index} out of range for K={k}")]
    BadContext { index: usize, k: usize },
    #[error("bad-posterior: row {row} sums to {sum}")]
    BadPosterior { row: usize, sum: f64 },
    #[error("missing-contexts: model has a supervised normalization layer but no assignment was given")]
    MissingContexts,
    #[error("bad-label: label {label} out of range for {classes} classes")]
    BadLabel { label: usize, classes: usize },
    #[error("nondeterministic-loss: two evaluations at the same point differ ({0} vs {1})")]
    NondeterministicLoss(f64, f64),
    #[error("packing-failed: could not place {k} centers at separation {separation} in {dim} dimensions")]
    PackingFailed { k: usize, separation: f64, dim: usize },
    #[error("bad-parameter: {0}")]
    BadParameter(String),
}

impl Error {
    /// Stable short code for the failure, e.g. `"empty-context"`.
    pub fn code(&self) -> &'static str {
        match self {
            Error::EmptySelection => "empty-selection",
            Error::NonFinite(_) => "non-finite",
            Error::BadEpsilon(_) => "bad-epsilon",
            Error::ShapeMismatch(_) => "shape-mismatch",
            Error::TooFewPoints { .. } => "too-few-points",
            Error::EmptyContext(_) => "empty-context",
            Error::WrongArity { .. } => "wrong-arity",
            Error::BadContext { .. } => "bad-context",
            Error::BadPosterior { .. } => "bad-posterior",
            Error::MissingContexts => "missing-contexts",
            Error::BadLabel { .. } => "bad-label",
            Error::NondeterministicLoss(..) => "nondeterministic-loss",
            Error::PackingFailed { .. } => "packing-failed",
            Error::BadParameter(_) => "bad-parameter",
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn shape_mismatch(msg: impl Into<String>) -> Error {
    Error::ShapeMismatch(msg.into())
}
