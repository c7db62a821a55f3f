use thiserror::Error;

use crate::expr::ExprError;

pub type GeoResult<T> = Result<T, GeoError>;

/// Errors raised by the geometry engine.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum GeoError {
    #[error("point {point:?} lies outside the chart domain of `{manifold}`")]
    OutOfDomain { manifold: String, point: Vec<f64> },

    #[error("metric of `{manifold}` is singular or indefinite at {point:?}")]
    SingularMetric { manifold: String, point: Vec<f64> },

    #[error("metric of `{manifold}` is not symmetric at {point:?} (asymmetry {asymmetry:e})")]
    AsymmetricMetric {
        manifold: String,
        point: Vec<f64>,
        asymmetry: f64,
    },

    #[error("warping function `{warp}` is not positive at {point:?} (value {value})")]
    NonPositiveWarp {
        warp: String,
        point: Vec<f64>,
        value: f64,
    },

    #[error("vector field is not a pure lift from a single factor: {0}")]
    MixedField(String),

    #[error("numerical rank of the differential is ambiguous at {point:?} (singular value {singular_value:e})")]
    RankDrop { point: Vec<f64>, singular_value: f64 },

    #[error("map `{0}` has no fibers (trivial vertical space)")]
    NoFibers(String),

    #[error("plane is degenerate (|X ^ Y|^2 = {0:e})")]
    DegeneratePlane(f64),

    #[error("not computable: {0}")]
    NotComputable(String),

    #[error("geodesic left the chart domain at t = {time}")]
    DomainExit { time: f64 },

    #[error("energy drift {drift:e} exceeds 1e-3 at t = {time}; reduce dt")]
    StepTooLarge { time: f64, drift: f64 },

    #[error("trace does not match case {case}: omega = {omega} at t = {time}")]
    CaseMismatch { case: u8, time: f64, omega: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Expr(#[from] ExprError),
}
