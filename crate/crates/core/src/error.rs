use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("non-finite value {value} when evaluating at point {point:?}")]
    Evaluation { point: Vec<f64>, value: f64 },

    #[error("support point {point:?} maps to {value}, which lies outside every bin")]
    Coverage { point: Vec<f64>, value: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("exponent {exponent} at point {point:?} exceeds cap {cap} (t = {t})")]
    Divergence {
        point: Vec<f64>,
        exponent: f64,
        cap: f64,
        t: f64,
    },

    #[error("step size underflow at t = {t} (S = {s}, B = {b}, h = {h})")]
    Stiffness { t: f64, s: f64, b: f64, h: f64 },

    #[error("capacity exceeded: {what} has size {size}, cap is {cap}")]
    Capacity {
        what: &'static str,
        size: usize,
        cap: usize,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("no mass on the fitness maximizing set; use the case-ii predictions")]
    ZeroArgmaxMass,

    #[error("subcritical: R0 = {r0} <= 1")]
    Subcritical { r0: f64 },

    #[error("scenario validation failed: {0}")]
    Validation(String),

    #[error("under-resolved window: {points} grid points, need at least {required}")]
    Resolution { points: usize, required: usize },

    #[error("lp solver: {0}")]
    Lp(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
