use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure carries a stable short code so that front ends can print a
/// single machine-parsable line (`error[code]: message`).
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("unsupported dimension {0} (supported: 2..=4)")]
    UnsupportedDimension(usize),

    #[error("state is not normalized (|<psi|psi> - 1| = {defect:.3e})")]
    NotNormalized { defect: f64 },

    #[error("operator is not Hermitian (defect {defect:.3e})")]
    NotHermitian { defect: f64 },

    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },

    #[error("time {t} outside domain [{start}, {end}]")]
    OutOfDomain { t: f64, start: f64, end: f64 },

    #[error("singular control: {quantity} diverges at t = {t}")]
    SingularControl { quantity: &'static str, t: f64 },

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("phase jump at t = {t} does not lie on a grid node")]
    JumpOffGrid { t: f64 },

    #[error("time {t} does not lie on a grid node")]
    TimeOffGrid { t: f64 },

    #[error("empty time grid")]
    EmptyGrid,

    #[error("path {path} is not eligible (von Neumann residual exceeds tolerance)")]
    IneligiblePath { path: usize },

    #[error("deficient rank: eligible paths {eligible:?} of {dim}")]
    DeficientRank { eligible: Vec<usize>, dim: usize },

    #[error("invalid configuration: {field}: {reason}")]
    Config { field: String, reason: String },
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension",
            Error::UnsupportedDimension(_) => "dimension",
            Error::NotNormalized { .. } => "normalization",
            Error::NotHermitian { .. } => "hermiticity",
            Error::IndexOutOfRange { .. } => "index",
            Error::OutOfDomain { .. } => "domain",
            Error::SingularControl { .. } => "singular",
            Error::ContractViolation(_) => "contract",
            Error::JumpOffGrid { .. } => "jump-grid",
            Error::TimeOffGrid { .. } => "time-grid",
            Error::EmptyGrid => "empty-grid",
            Error::IneligiblePath { .. } => "ineligible",
            Error::DeficientRank { .. } => "rank",
            Error::Config { .. } => "config",
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config { field: field.into(), reason: reason.into() }
    }
}
