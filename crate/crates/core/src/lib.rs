//! Sparse projection posteriors for grouped high-dimensional regression.
//!
//! Draws from a conjugate Gaussian ridge posterior are projected through a
//! group-penalized least squares map (group LASSO, group SCAD or adaptive
//! group LASSO). The projected ensemble is summarized by the median
//! probability model, debiased for calibrated credible intervals, and
//! extended to additive models through B-spline expansion.

pub mod additive;
pub mod debias;
pub mod design;
pub mod error;
pub mod pipeline;
pub mod posterior;
pub mod projection;
pub mod selection;
pub mod simulation;

pub use error::{Error, Result, Stage};
