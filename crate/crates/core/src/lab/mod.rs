//! Numerical experiments built on the model: functional inequalities,
//! the U-bound, the entropy splitting and the block dynamics.

pub mod blocks;
pub mod functionals;
pub mod telescope;
pub mod ubound;

pub use blocks::{block_dynamics_iterate, BlockDynamicsRun};
pub use functionals::{
    default_family, ls_ratio_scan, sg_from_ls_relation_check, sg_ratio_scan, SampleMeasure,
    ScanReport, TwoPointMeasure,
};
pub use telescope::{entropy_telescoping_check, TelescopeReport};
pub use ubound::{
    calibrate_additive_constant, grad_dot_check, ubound_integral_check, ubound_pointwise_check,
    UBoundConstants, UBoundReport,
};
