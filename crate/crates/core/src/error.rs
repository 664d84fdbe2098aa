use crate::geometry::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    #[error("target coincides with beacon {beacon} (distance {distance:e} m)")]
    DegenerateGeometry { beacon: usize, distance: f64 },

    #[error("invalid scenario: {}", join_violations(.0))]
    InvalidScenario(Vec<Violation>),

    #[error("invalid bias model: {0}")]
    InvalidBiasModel(String),

    #[error("unsupported operation: {0}")]
    UnsupportedOperation(&'static str),

    #[error("quadrature did not converge (best value {value:e}, error estimate {error_estimate:e})")]
    QuadratureConvergence { value: f64, error_estimate: f64 },

    #[error("integrand is not finite at x = {x:e}")]
    QuadratureDomain { x: f64 },

    #[error("marginal density underflow at r = {r} for beacon {beacon}")]
    OutsideSupport { beacon: usize, r: f64 },

    #[error("no closed-form coefficient for the {variant} bias of beacon {beacon}")]
    NoClosedForm { beacon: usize, variant: &'static str },

    #[error("approximation needs kappa < sigma, beacon {beacon} has kappa/sigma = {ratio:.6}")]
    ApproximationDomain { beacon: usize, ratio: f64 },

    #[error("unobservable geometry: FIM condition number {condition:e}")]
    UnobservableGeometry { condition: f64 },

    #[error("no optimizer start converged (best loglik {loglik} at {location:?})")]
    OptimizationFailure { location: Vec<f64>, loglik: f64 },

    #[error("joint estimator enumerates 2^{beacons} indicator vectors, limit is 2^16")]
    EnumerationTooLarge { beacons: usize },

    #[error("{0}")]
    InvalidArgument(String),
}

impl Error {
    /// Short stable identifier used as the prefix of CLI error lines.
    pub fn code(&self) -> &'static str {
        match self {
            Error::DegenerateGeometry { .. } => "degenerate-geometry",
            Error::InvalidScenario(_) => "invalid-scenario",
            Error::InvalidBiasModel(_) => "invalid-bias-model",
            Error::UnsupportedOperation(_) => "unsupported-operation",
            Error::QuadratureConvergence { .. } => "quadrature-convergence",
            Error::QuadratureDomain { .. } => "quadrature-domain",
            Error::OutsideSupport { .. } => "outside-support",
            Error::NoClosedForm { .. } => "no-closed-form",
            Error::ApproximationDomain { .. } => "approximation-domain",
            Error::UnobservableGeometry { .. } => "unobservable-geometry",
            Error::OptimizationFailure { .. } => "optimization-failure",
            Error::EnumerationTooLarge { .. } => "enumeration-too-large",
            Error::InvalidArgument(_) => "invalid-argument",
        }
    }
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}
