//! Construction of a usable measurement matrix for compressed-sensing
//! reconstruction when the true matrix is unknown.
//!
//! A known pre-measurement matrix `A` and a chosen pre-measure image give a
//! closed-form rank-1 family of matrices (the mismatch equation) that can be
//! matched to any measured value. [`matched`] accumulates such terms by error
//! iteration for one target; [`calibration`] combines one term per basis
//! image into a matrix valid on the span of the basis. [`sim`] stands in for
//! the physical channel and [`reconstruct`] for the downstream sparse solver.

pub mod calibration;
pub mod diagnostics;
pub mod error;
pub mod matched;
pub mod mismatch;
pub mod operator;
pub mod real;
pub mod reconstruct;
pub mod sim;
pub mod types;

pub use error::{Error, Result};
pub use operator::{FactoredRecvMatrix, LinearOperator, MismatchTerm};
pub use real::{Precision, Real};
pub use types::{validate_dims, Image, MeasurementMatrix, MeasurementVector, SigmaMatrix};
