//! Statistical moment steering for non-Gaussian distributions in nonlinear
//! astrodynamics.
//!
//! The library steers a state distribution, represented by a weighted cloud of
//! Conjugate Unscented Transformation (CUT) sigma points, through nonlinear
//! dynamics with an impulsive linear-feedback policy `u_k = ubar_k + K_k (x - mu_k)`.
//! Statistical moments of the cloud (mean, square-root covariance, skewness,
//! kurtosis and general standardized moments) are expressed as functions of the
//! aggregated sigma-point vector, linearized about a reference, and enforced as
//! cone-program constraints inside a sequential convex programming loop
//! (`SCvx*`-style penalties, step acceptance and trust-region adaptation).
//! Converged policies are validated by deterministic Monte Carlo ensembles.
//!
//! Module map:
//! - [`cut`]: CUT-4G / CUT-6G sigma-set construction.
//! - [`moments`]: aggregated-vector moment algebra and moment Jacobians.
//! - [`dynamics`]: two-body / CR3BP propagation, per-segment linearization,
//!   Keplerian conversions and halo-orbit utilities.
//! - [`conic`]: solver-agnostic cone-program representation and the adapter to
//!   the conic solver backend.
//! - [`scvx`]: subproblem assembly, penalty bookkeeping and the outer loop.
//! - [`monte_carlo`]: ensemble propagation, empirical moments, delta-v
//!   statistics and sample-size convergence analysis.
//! - [`scenario`]: configuration loading, shipped scenario presets,
//!   orchestration and CSV/JSON artifact emission.

pub mod conic;
pub mod cut;
pub mod dynamics;
pub mod moments;
pub mod monte_carlo;
pub mod scenario;
pub mod scvx;
