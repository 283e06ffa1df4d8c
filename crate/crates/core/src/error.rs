use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("quadrature did not converge in {context} near {at} (error estimate {estimate:.3e})")]
    Quadrature { context: String, at: f64, estimate: f64 },

    #[error("ODE integration failed at λ = {lambda} (x = {at}): {reason}")]
    Ode { lambda: String, at: f64, reason: String },

    #[error("phase tracking too coarse on {context}")]
    BoundaryTooCoarse { context: String },

    #[error("momentum integral routes disagree for k = {k}, n = {n}: {radial} vs {fourier}")]
    RouteMismatch { k: usize, n: usize, radial: f64, fourier: f64 },

    #[error("level s = {level} is degenerate (|∇V| = {grad:.3e} at x = {at})")]
    DegenerateLevel { level: f64, at: f64, grad: f64 },

    #[error("monotonicity violation: {0}")]
    Monotonicity(String),

    #[error("ill-conditioned fit (condition number {0:.3e})")]
    IllConditioned(f64),

    #[error("flowline stalled at x = {at}: R'(R^-1(V)) vanished away from the peak")]
    Singularity { at: f64 },

    #[error("phase unwrap failed near λ = {at}: jump {jump:.3} after maximal refinement")]
    PhaseUnwrap { at: f64, jump: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn invalid(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name: name.into(), reason: reason.into() }
    }

    pub(crate) fn quad(context: impl Into<String>, f: crate::quadrature::QuadFailure) -> Self {
        Error::Quadrature { context: context.into(), at: f.at, estimate: f.error_estimate }
    }
}
