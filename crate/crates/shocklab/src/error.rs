//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ShockError {
    #[error("unknown system `{0}`")]
    UnknownSystem(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("state outside physical domain: {0}")]
    Unphysical(String),
    #[error("degenerate jump: endstates coincide")]
    DegenerateJump,
    #[error("Newton iteration failed: {0}")]
    Newton(String),
    #[error("no connecting profile found: {0}")]
    NoConnection(String),
    #[error("profile not resolved: {0}")]
    Unresolved(String),
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),
    #[error("eigensolver failure: {0}")]
    Eigensolver(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("time stepping failed: {0}")]
    Stepping(String),
    #[error("horizon too short: {0}")]
    Horizon(String),
    #[error("fixed-point iteration failed to contract: {0}")]
    NonContraction(String),
    #[error("energy form construction failed: {0}")]
    EnergyForm(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("missing or corrupt artifact: {0}")]
    Artifact(String),
    #[error(transparent)]
    Ode(#[from] crate::ode::OdeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ShockError>;
