//! Galerkin models of stochastically forced 2D magnetohydrodynamics, with
//! tools for hypoellipticity checks (bracket directions, reachability of
//! forced modes, Malliavin matrices) and ergodic diagnostics.

#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod bracket;
pub mod ergodic;
pub mod error;
pub mod galerkin;
pub mod lattice;
pub mod malliavin;
pub mod reach;

pub use error::{Error, Result};
