use thiserror::Error;

/// Errors raised by construction, evaluation and integration routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("parameter out of domain: {0}")]
    ParameterDomain(String),
    #[error("ℓ below gluing threshold: {0}")]
    GluingThreshold(String),
    #[error("t = {t} lies outside the domain [{lo}, {hi}]")]
    OutOfDomain { t: f64, lo: f64, hi: f64 },
    #[error("convexity violation: {0}")]
    Convexity(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("degenerate warp: {0}")]
    DegenerateWarp(String),
    #[error("construction inconsistency at junction t = {junction}: order-{order} mismatch {mismatch:e} exceeds {tolerance:e}")]
    Junction {
        junction: f64,
        order: usize,
        mismatch: f64,
        tolerance: f64,
    },
    #[error("smoothing threshold: constraint `{constraint}` failed ({detail})")]
    SmoothingThreshold { constraint: String, detail: String },
    #[error("dimension 2 has no 2-planes tangent to the levels")]
    NoLevelPlanes,
    #[error("frame error: {0}")]
    Frame(String),
    #[error("too close to the chart boundary: {0}")]
    ChartMargin(String),
    #[error("degenerate plane")]
    DegeneratePlane,
    #[error("integration failed at s = {s}: {reason}")]
    Integration { s: f64, reason: String },
    #[error("search exhausted: {0}")]
    SearchExhausted(String),
    #[error("boundary classification: {0}")]
    Boundary(String),
}

pub type Result<T> = std::result::Result<T, Error>;
