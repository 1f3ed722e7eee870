//! Covariance-based device activity detection for massive random access.
//!
//! The crate covers the full pipeline of the covariance approach:
//!
//! * [`model`] draws pilot matrices, activity patterns and received signals;
//! * [`solvers`] estimates the large-scale fading vector from a covariance
//!   matrix (coordinate-descent maximum likelihood, its regularized variants
//!   and the NNLS baseline) and thresholds it into activity decisions;
//! * [`fisher`] builds the Fisher information matrix, the Khatri-Rao lift and
//!   its real re-encoding;
//! * [`phase`] decides identifiability of a support through two equivalent
//!   linear programs and sweeps `(L, K)` grids;
//! * [`errordist`] predicts the finite-`M` error law by projecting
//!   Fisher-shaped Gaussian draws onto the feasibility cone;
//! * [`embed`] extends everything to joint activity and data detection.
//!
//! Monte-Carlo loops run on rayon when the `parallel` feature is enabled
//! (the default); see [`par`].

pub mod embed;
pub mod errordist;
pub mod fisher;
pub mod hull;
pub mod linalg;
pub mod lp;
pub mod model;
pub mod par;
pub mod phase;
pub mod qp;
pub mod rng;
pub mod solvers;

mod error;

pub use error::{Error, Result};

pub use num_complex::Complex64;
