use thiserror::Error;

use crate::heis::GroupElement;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("point {point} is within {distance:e} of the x3-axis where {what} is singular")]
    SingularPoint {
        point: GroupElement,
        distance: f64,
        what: &'static str,
    },

    #[error("root finder failed to converge: {0}")]
    RootFinding(String),

    #[error("missing boundary value for site {0}")]
    MissingBoundary(i64),

    #[error("missing spin for site {0}")]
    MissingSpin(i64),

    #[error("site {0} is not in the window")]
    SiteOutsideWindow(i64),

    #[error("quadrature failure: {0}")]
    Quadrature(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("unsupported request: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, LabError>;
