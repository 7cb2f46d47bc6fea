use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("component index {index} out of range (n = {n})")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("averaged operator matrix is singular")]
    Singular,
    #[error("component {0} is not affine")]
    NotAffine(usize),
    #[error("component {0} has no Lipschitz / monotonicity constants")]
    MissingConstants(usize),
    #[error("root residual {residual:e} exceeds tolerance {tol:e}")]
    RootTolerance { residual: f64, tol: f64 },
    #[error("point is not a root: ||F(x)|| = {0:e}")]
    NotARoot(f64),
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("empty sample")]
    EmptySample,
    #[error("iteration {k} is beyond the schedule horizon {total}")]
    OutOfHorizon { k: usize, total: usize },
    #[error("iterates diverged at iteration {k}")]
    Diverged { k: usize },
    #[error("stepsize {gamma} exceeds the admissible cap {cap}")]
    StepsizeCap { gamma: f64, cap: f64 },
    #[error("bound not applicable: {0}")]
    Inapplicable(String),
    #[error("malformed game file: {0}")]
    Malformed(String),
    #[error("unsupported game file version {0}")]
    Version(u32),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Invalid(msg.into())
}
