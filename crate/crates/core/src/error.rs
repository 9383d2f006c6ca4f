use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("volatility vanishes at y = {y}")]
    NonPositiveVolatility { y: f64 },

    #[error("numerical integration of the fundamental solutions failed: {0}")]
    IntegrationFailure(String),

    #[error("point outside the admissible domain: {0}")]
    Domain(String),

    #[error("field F(x, y) is undefined on or below the diagonal (x = {x}, y = {y})")]
    Diagonal { x: f64, y: f64 },

    #[error("no sign change of F({x}, .) found below the cap y = {cap}")]
    NotFound { x: f64, cap: f64 },

    #[error("step size underflow at x = {x} (b = {b}) away from the diagonal")]
    StepFailure { x: f64, b: f64 },

    #[error("anchor envelope did not stabilise after {anchors} anchors (last sup difference {last_diff:e})")]
    NoConvergence { anchors: usize, last_diff: f64 },

    #[error("barrier leaves the class B at x = {x}: {reason}")]
    MembershipViolation { x: f64, reason: String },

    #[error("model file: {0}")]
    ModelFile(String),

    #[error("writing output: {0}")]
    Output(String),
}

pub type Result<T> = std::result::Result<T, Error>;
