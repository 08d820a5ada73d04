use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported spatial dimension {0} (expected 2 or 3)")]
    UnsupportedDimension(usize),

    #[error("no quadrature rule of degree {degree} in dimension {dim}")]
    UnsupportedDegree { dim: usize, degree: usize },

    #[error("point {0:?} lies outside the mesh")]
    NotFound(Vec<f64>),

    #[error("point source {0:?} lies on or too close to the boundary")]
    PointOnBoundary(Vec<f64>),

    #[error("saddle-point system is singular: {0}")]
    SingularSystem(String),

    #[error("kernel evaluated at its singular point")]
    SingularPoint,

    #[error("{solver} did not converge within {iterations} iterations (residual {residual:.3e})")]
    MaxIterExceeded {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("point sets differ in size or location")]
    MismatchedPoints,

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("at level {level}")]
    AtLevel {
        level: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
