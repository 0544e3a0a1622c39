use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("medium loses ellipticity: {0}")]
    Ellipticity(String),

    #[error("non-finite coefficient value at y = {y:?}")]
    NonFiniteCoefficient { y: Vec<f64> },

    #[error("eigensolver did not converge after {iterations} iterations (residual {residual:.3e})")]
    EigenNonConvergence { iterations: usize, residual: f64 },

    #[error("Richardson extrapolation did not converge for {quantity}: successive estimates differ by {gap:.3e}")]
    RichardsonNonConvergence { quantity: &'static str, gap: f64 },

    #[error("quadrature did not converge under node doubling (change {change:.3e})")]
    QuadratureNonConvergence { change: f64 },

    #[error("symmetric medium required: {0}")]
    SymmetryRequired(String),

    #[error("time step {dt} violates the CFL bound {bound}")]
    Cfl { dt: f64, bound: f64 },

    #[error("computational domain too small: half-width {half_width} < required {required}")]
    DomainTooSmall { half_width: f64, required: f64 },

    #[error("instability detected at step {step} (t = {time})")]
    Instability { step: usize, time: f64 },

    #[error("positivity lost after coefficient averaging at index {index}: {value}")]
    Positivity { index: usize, value: f64 },

    #[error("implicit operator factorization failed: {0}")]
    Factorization(String),

    #[error("incompatible grids: {0}")]
    IncompatibleGrids(String),

    #[error("unknown figure id `{0}`")]
    UnknownFigure(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Short machine-readable category used in CLI error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::Ellipticity(_) => "ellipticity",
            Error::NonFiniteCoefficient { .. } => "non_finite_coefficient",
            Error::EigenNonConvergence { .. } => "eigen_non_convergence",
            Error::RichardsonNonConvergence { .. } => "richardson_non_convergence",
            Error::QuadratureNonConvergence { .. } => "quadrature_non_convergence",
            Error::SymmetryRequired(_) => "symmetry_required",
            Error::Cfl { .. } => "cfl",
            Error::DomainTooSmall { .. } => "domain_too_small",
            Error::Instability { .. } => "instability",
            Error::Positivity { .. } => "positivity",
            Error::Factorization(_) => "factorization",
            Error::IncompatibleGrids(_) => "incompatible_grids",
            Error::UnknownFigure(_) => "unknown_figure",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
        }
    }
}
