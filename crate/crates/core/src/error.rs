use thiserror::Error;

/// Errors surfaced by the laboratory's operations.
#[derive(Debug, Error)]
pub enum Error {
    /// A point lies outside the spatial domain (beyond the snapping tolerance).
    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed or out-of-contract input (non-finite vectors, empty plans, ...).
    #[error("input error: {0}")]
    Input(String),

    /// A structural parameter violates its precondition (delta >= R, eps_t >= T/4, ...).
    #[error("parameter error: {0}")]
    Parameter(String),

    /// Conjugation search box exhausted with the maximizer still on the boundary.
    #[error("radius error: search radius {radius} exhausted for |b| = {b_norm}; enlarge growth hint")]
    Radius { radius: f64, b_norm: f64 },

    /// A bracket or modular value overflowed every probed scale.
    #[error("overflow error: {0}")]
    Overflow(String),

    /// An iterative solve (Picard, monotone inversion) did not reach tolerance.
    #[error("convergence error: {0}")]
    Convergence(String),

    /// Expression parsing failed.
    #[error("expression error at byte {pos}: {msg}")]
    Expr { pos: usize, msg: String },

    /// Scenario configuration is invalid.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
