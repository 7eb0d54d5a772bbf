//! Numerical laboratory for viscous shock waves of one-dimensional
//! hyperbolic-parabolic systems of conservation laws.
//!
//! The crate builds standing shock profiles, discretizes and analyzes the
//! linearized operator about them, verifies compensated (Kawashima-type)
//! energy estimates, constructs a discrete center-stable manifold by a
//! truncated fixed-point iteration, and measures nonlinear orbital decay
//! rates and conditional stability in time-domain experiments.
//!
//! Pipelines are driven by JSON configs through the `shocklab` binary; see
//! the crate README for the CLI.

pub mod cli;
pub mod dynamics;
pub mod energy;
pub mod error;
pub mod fd;
pub mod fit;
pub mod grid;
pub mod interp;
pub mod linop;
pub mod manifold;
pub mod model;
pub mod ode;
pub mod profile;

pub use error::{Result, ShockError};
