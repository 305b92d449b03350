use thiserror::Error;

/// Errors surfaced by the flow and statistics routines.
///
/// The variants mirror the failure modes of the numerical pipeline: bad
/// dimensions or profiles at construction time, contract violations on
/// operation inputs, and runtime numeric failures (stiffness, eigenvalue
/// collisions, state-space blowup).
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("infeasible variance profile: {0}")]
    InfeasibleProfile(String),

    #[error("unsupported aspect ratio: M = {m} < N = {n}")]
    UnsupportedAspect { m: usize, n: usize },

    #[error("spectral domain error: {0}")]
    Domain(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numeric failure at step {step}: {message}")]
    Numeric { step: usize, message: String },

    #[error("stability violation: {0}")]
    Stability(String),

    #[error("eigenvalue gap {gap:.3e} between indices {i} and {j} is below the guard {guard:.3e}")]
    GapCollision {
        i: usize,
        j: usize,
        gap: f64,
        guard: f64,
    },

    #[error("configuration space has {states} states, above the cap of {cap}")]
    EnumerationCap { states: u128, cap: u64 },

    #[error("integrator step underflow (stiffness), smallest eigenvalue gap {min_gap:.3e}")]
    Stiffness { min_gap: f64 },

    #[error("insufficient statistics: {0}")]
    Statistics(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
