use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain violation: {0}")]
    Domain(String),

    #[error("invalid drawdown function: {0}")]
    InvalidDrawdown(String),

    #[error("adaptive quadrature did not converge on [{a}, {b}]")]
    QuadratureNonConvergence { a: f64, b: f64 },

    #[error("inversion failed for target {target}: {reason}")]
    Inversion { target: f64, reason: String },

    #[error("drawdown constraint breached: wealth {wealth} is not above floor {floor}")]
    ConstraintBreach { wealth: f64, floor: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("volatility matrix is singular on piece starting at t={t}")]
    SingularVolatility { t: f64 },

    #[error("utility changes sign within a sample at horizon {horizon}")]
    SignFlip { horizon: f64 },

    #[error("elasticity did not settle on the probe grid: {0}")]
    NonConvergentElasticity(String),

    #[error("i/o: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
