use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("integer overflow in {0}")]
    Overflow(&'static str),
    #[error("rank-deficient feature list at input {index} (pivot {pivot:.3e})")]
    RankDeficient { index: usize, pivot: f64 },
    #[error("calibration variance {variance:.3e} below 1e-12")]
    ScaleUnderflow { variance: f64 },
    #[error("singular expected Hessian (min |eigenvalue| = {min_abs_eig:.3e})")]
    SingularHessian { min_abs_eig: f64 },
    #[error("inner activation has c2 = 0")]
    ZeroC2,
    #[error("degenerate feature scale: max |<w, h>| = {max:.3e}")]
    DegenerateScale { max: f64 },
    #[error("stage-2 objective increased for 10 consecutive steps (step {step})")]
    Divergence { step: usize },
    #[error("analytic Hessian supports degree <= 6, link has degree {0}")]
    UnsupportedDegree(usize),
    #[error("memory budget of {budget} bytes cannot hold {needed} bytes for {what}")]
    MemoryBudget { what: &'static str, needed: usize, budget: usize },
    #[error("config error: {0}")]
    Config(String),
    #[error("invariant failure: {0}")]
    Invariant(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code used by the command-line runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => 2,
            Error::Invariant(_) => 3,
            Error::Divergence { .. } => 4,
            _ => 1,
        }
    }
}
