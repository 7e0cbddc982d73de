//! Minimizing-movement (JKO) scheme for a Keller–Segel system with
//! nonlinear mobility, together with the weighted Wasserstein distance it
//! relies on, a finite-volume reference solver and convergence diagnostics.

pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod jko;
mod linalg;
pub mod model;
pub mod presets;
pub mod reference;
pub mod snapshots;
pub mod transport;

pub use error::{Error, Result};
