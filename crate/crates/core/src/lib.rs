//! Glassy relaxation of the disordered power-law quantum Ising model.
//!
//! - [`ensemble`]: random spin positions with hard-core exclusion.
//! - [`couplings`]: power-law and factorized anisotropic couplings.
//! - [`dynamics`]: exact Emch-Radin curves, disorder averages, a state-vector
//!   oracle.
//! - [`analytic`]: thermodynamic-limit closed forms and the quadrature that
//!   checks them.
//! - [`fitting`]: stretched-exponential and power-law fits, parameter scans.

pub mod analytic;
pub mod couplings;
pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod exec;
pub mod fitting;
pub mod stats;

pub use error::{Error, Result};
pub use exec::Execution;
