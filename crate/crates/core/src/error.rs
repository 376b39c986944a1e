use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("value {value} out of range [{min}, {max}] at index {index}")]
    Range {
        index: usize,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("insufficient data: need at least {needed} formal observations, have {have}")]
    InsufficientData { needed: usize, have: usize },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("kernel matrix could not be factorized (jitter reached {jitter:e})")]
    Conditioning { jitter: f64 },

    #[error("point {index} does not dominate the reference point")]
    Reference { index: usize },

    #[error("unsupported objective count {0}; only m = 2 is supported")]
    UnsupportedDimension(usize),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("candidate generation failed: {0}")]
    CandidateGeneration(String),

    #[error("proposals are disabled until {needed} formal evaluations are available (have {have})")]
    InsufficientSeed { needed: usize, have: usize },

    #[error("operation not allowed in {mode} mode: {detail}")]
    ModeForbids { mode: String, detail: String },

    #[error("session is closed")]
    Closed,

    #[error("advisor unavailable after {attempts} attempts: {last_failure}")]
    AdvisorUnavailable { attempts: u32, last_failure: String },

    #[error("log line {line}: {message}")]
    Load { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable code used by the HTTP service and CLI diagnostics.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::Range { .. } => "range",
            Error::InsufficientData { .. } => "insufficient_data",
            Error::Data(_) => "data",
            Error::Conditioning { .. } => "conditioning",
            Error::Reference { .. } => "reference",
            Error::UnsupportedDimension(_) => "unsupported_dimension",
            Error::Argument(_) => "argument",
            Error::Config(_) => "config",
            Error::CandidateGeneration(_) => "candidate_generation",
            Error::InsufficientSeed { .. } => "insufficient_seed",
            Error::ModeForbids { .. } => "mode_forbids",
            Error::Closed => "closed",
            Error::AdvisorUnavailable { .. } => "advisor_unavailable",
            Error::Load { .. } => "load",
            Error::Io(_) => "io",
        }
    }
}
