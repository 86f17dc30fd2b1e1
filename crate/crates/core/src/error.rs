use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("integral diverges: {0}")]
    Divergence(String),

    #[error("infinite norm: {0}")]
    InfiniteNorm(String),

    #[error("relative velocity vanishes, scattering direction is undefined")]
    DegenerateDirection,

    #[error("shape mismatch: expected {expected} nodes, found {found}")]
    ShapeMismatch { expected: usize, found: usize },

    #[error("step size too large: dt * max(nu) = {product:.4} exceeds {limit}")]
    StepSize { product: f64, limit: f64 },

    #[error("time {0} is not a snapshot time")]
    Lookup(f64),

    #[error("degenerate input: {0}")]
    Degenerate(String),
}

pub type Result<T> = std::result::Result<T, Error>;
