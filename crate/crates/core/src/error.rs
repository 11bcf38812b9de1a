use thiserror::Error;

/// Errors raised by the core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("argument outside the domain: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("quadrature did not converge: achieved error {achieved:.3e}, requested {requested:.3e}")]
    Quadrature { achieved: f64, requested: f64 },

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("model evaluation failed: {0}")]
    ModelEvaluation(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("root finding failed: {0}")]
    RootFinding(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Short machine-readable class name, stable across releases.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::Quadrature { .. } => "quadrature",
            Error::Degenerate(_) => "degenerate_data",
            Error::ModelEvaluation(_) => "model_evaluation",
            Error::Unsupported(_) => "unsupported",
            Error::RootFinding(_) => "root_finding",
            Error::Parse { .. } => "parse",
            Error::Io(_) => "io",
        }
    }
}
