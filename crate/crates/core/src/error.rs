use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error(
        "polyhedral projection did not converge after {iterations} cycles (residual {residual:e})"
    )]
    ProjectionNotConverged { iterations: usize, residual: f64 },

    #[error("normal direction undefined: point lies at distance {distance:e} from the domain")]
    UndefinedNormal { distance: f64 },

    #[error("explicit penalization is unstable: n*h = {product} exceeds 1 (n = {n}, h = {step})")]
    StabilityGuard { n: f64, step: f64, product: f64 },

    #[error("non-finite state at step {step}")]
    NonFinite { step: usize },

    #[error("non-finite coefficient output at t = {t}, x = {x:?}")]
    NonFiniteCoefficient { t: f64, x: Vec<f64> },

    #[error("starting point {x0:?} is outside the domain (distance {distance:e})")]
    StartOutside { x0: Vec<f64>, distance: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("integration failed for path {path}{}: {source}", level.map(|n| format!(" at n = {n}")).unwrap_or_default())]
    Integration {
        level: Option<f64>,
        path: u64,
        source: Box<Error>,
    },
}
