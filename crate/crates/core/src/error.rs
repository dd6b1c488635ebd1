use thiserror::Error;

pub type Result<T> = std::result::Result<T, QstError>;

#[derive(Debug, Error)]
pub enum QstError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("grid span too small: {0}")]
    SpanTooSmall(String),

    #[error("axis mismatch: {0}")]
    AxisMismatch(String),

    #[error("point outside grid span: {0}")]
    OutOfSpan(String),

    #[error("non-finite value in field: {0}")]
    NonFinite(String),

    #[error("imaginary residue {residue:.3e} exceeds {limit:.1e}: inconsistent Moyal input")]
    ImaginaryResidue { residue: f64, limit: f64 },

    #[error("state is not physical: {0}")]
    NotPhysical(String),

    #[error("grid too large for brute-force simulation: {0}")]
    GridTooLarge(String),

    #[error("coupling shift not on grid: {0}")]
    ShiftNotOnGrid(String),

    #[error(
        "insufficient probe coverage (covered fraction {covered:.4} < {required}): \
         measurement too strong/weak for this grid"
    )]
    Coverage { covered: f64, required: f64 },

    #[error("deconvolution divergent on this grid: {0}")]
    Divergence(String),

    #[error("self-test failed: {0}")]
    SelfTest(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl QstError {
    /// Process exit code used by the `qst` binary.
    pub fn exit_code(&self) -> i32 {
        match self {
            QstError::Coverage { .. } | QstError::Divergence(_) => 3,
            QstError::SelfTest(_) => 1,
            _ => 2,
        }
    }
}
