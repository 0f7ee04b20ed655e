//! Simulation, estimation, goodness-of-fit testing and sequential change-point
//! detection for generalized Ornstein-Uhlenbeck (GOU) processes
//!
//! ```text
//! dX_t = (mu' phi(t) - a X_t) dt + sigma dB_t
//! ```
//!
//! where `phi` is a 1-periodic orthonormal Fourier basis with `phi_1 = 1`.
//!
//! Layout:
//! - [`model`]: basis, parameters and their closed-form limits (`Sigma`, kappa constants).
//! - [`simulate`]: exact transition sampling, change-point injection, Euler-Maruyama.
//! - [`estimate`]: discretized regression, least squares, realized QV, continuous-record MLE.
//! - [`gof`]: Kolmogorov-Smirnov / Cramer-von Mises tests on standardized residuals.
//! - [`detect`]: residual CUSUM (`Q`) and estimator-difference (`Gamma`) monitors.
//! - [`critvals`]: Monte Carlo critical values of `sup ||B_k(t)|| / t^gamma`.
//! - [`experiments`]: scenario grids and power curves.

// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod critvals;
pub mod detect;
pub mod error;
pub mod estimate;
pub mod experiments;
pub mod gof;
pub mod linalg;
pub mod model;
pub mod normal;
pub mod rng;
pub mod simulate;

pub use error::{Error, Result};
pub use model::{BasisSpec, GouModel, SigmaMatrix};
