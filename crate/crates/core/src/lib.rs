//! Numerical laboratory for the Heisenberg group `ℍ`: group calculus, the
//! Carnot–Carathéodory metric, lattice Gibbs measures with spins in `ℍ`, and
//! checks of coercive inequalities (log-Sobolev, spectral gap, U-bounds).

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cylinder;
pub mod error;
pub mod heis;
pub mod lab;
pub mod metric;
pub mod model;
pub mod quadrature;
pub mod sampler;
pub mod stats;

pub use error::{LabError, Result};
pub use heis::{GroupElement, HorizontalVector, ScalarField, Smoothness};
