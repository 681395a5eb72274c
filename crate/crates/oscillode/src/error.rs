use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("fixed-point iteration failed to converge (residual {residual:.3e} after {iterations} iterations)")]
    FixedPointDiverged { residual: f64, iterations: usize },

    #[error("step size underflow at t = {t}: required step {step:.3e} below 1e-14")]
    StepSizeUnderflow { t: f64, step: f64 },

    #[error("truncation order {0} unsupported, only k in {{0, 1}} is implemented")]
    UnsupportedOrder(usize),

    #[error("singular matrix: pivot {pivot:.3e} below threshold")]
    SingularMatrix { pivot: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("network mode mismatch: {0}")]
    ModeMismatch(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("non-finite gradient in parameter block {0}")]
    NonFiniteGradient(String),

    #[error("non-finite micro state at step {step} (1/eps defect term blow-up)")]
    NonFiniteMicroState { step: usize },

    #[error("unknown problem '{0}'")]
    UnknownProblem(String),

    #[error("dataset generation failure rate {failed}/{total} exceeds 1%")]
    GenerationFailureRate { failed: usize, total: usize },

    #[error("dataset parse error at line {line}: {message}")]
    DatasetParse { line: usize, message: String },

    #[error("format version mismatch: found '{found}', expected '{expected}'")]
    FormatVersion { found: String, expected: String },

    #[error("validation failed:\n{}", .0.join("\n"))]
    Validation(Vec<String>),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 validation, 3 numerical, 4 i/o.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinite(_)
            | Error::InvalidArgument(_)
            | Error::UnsupportedOrder(_)
            | Error::DimensionMismatch { .. }
            | Error::ModeMismatch(_)
            | Error::UnknownProblem(_)
            | Error::Validation(_) => 2,
            Error::FixedPointDiverged { .. }
            | Error::StepSizeUnderflow { .. }
            | Error::SingularMatrix { .. }
            | Error::NonFiniteLoss { .. }
            | Error::NonFiniteGradient(_)
            | Error::NonFiniteMicroState { .. }
            | Error::GenerationFailureRate { .. } => 3,
            Error::DatasetParse { .. }
            | Error::FormatVersion { .. }
            | Error::Checkpoint(_)
            | Error::Io(_)
            | Error::Json(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
