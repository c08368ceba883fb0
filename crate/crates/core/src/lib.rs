//! Stationary Best Reply Strategy (BRS) and ergodic Mean Field Game (MFG)
//! equilibria on a bounded interval with no-flux boundaries.
//!
//! The crate provides a uniform grid with trapezoid quadrature, a catalog of
//! congestion costs `h(x, m)`, a pointwise fixed-point BRS solver, two MFG
//! solvers (damped Picard on the HJB/Gibbs system and a nested
//! `(u, λ, Z)` scheme), closed-form Gaussian references, comparison metrics and
//! a TOML-driven scenario runner.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analytic;
pub mod brs;
pub mod compare;
pub mod cost;
mod eigen;
pub mod error;
pub mod grid;
pub mod mfg;
mod roots;
pub mod scenario;
mod tridiag;

pub use brs::{BrsConfig, BrsSolution};
pub use cost::{CostModel, Potential, Well};
pub use error::{Error, Result};
pub use grid::{build_grid, FieldRole, Grid, ScalarField};
pub use mfg::{MfgConfig, MfgSolution};
