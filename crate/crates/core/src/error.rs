use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BrwError {
    #[error("unsupported lattice dimension {0} (expected 1, 2 or 3)")]
    UnsupportedDim(usize),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("argument outside domain: {0}")]
    Domain(String),
    #[error("mgf blowup at step {step}")]
    MgfBlowup { step: usize },
    #[error("degenerate offspring law: {0}")]
    Degenerate(String),
    #[error("invalid offspring law: {0}")]
    InvalidLaw(String),
    #[error("pmf truncation mass {mass:e} exceeds 1e-9 at degree {degree}")]
    Truncation { mass: f64, degree: usize },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("attempt budget of {max_attempts} exhausted before survival")]
    BudgetExceeded { max_attempts: u64 },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for BrwError {
    fn from(e: std::io::Error) -> Self {
        BrwError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, BrwError>;
