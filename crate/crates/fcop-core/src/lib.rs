//! Common-factor copula models for replicated spatial data.
//!
//! The model couples a stationary Gaussian random field `Z(s)` with a single
//! latent factor `V0` shared by all locations,
//!
//! ```text
//! W(s) = Z(s) + V0,
//! ```
//!
//! and uses the copula of the finite-dimensional vector `W = (W_1, ..., W_n)`
//! to describe the joint dependence of replicated observations at `n` sites.
//! Heavy-tailed choices of `V0` (exponential, Pareto, Weibull, and differences
//! of those) produce tail dependence and tail asymmetry that a Gaussian copula
//! cannot express, while the correlation function of `Z` keeps the usual
//! distance-based parameterization of spatial statistics.
//!
//! The crate provides:
//!
//! - [`spatial`]: locations, distances, correlation families and the matrices
//!   `Σ_Z` and `Σ_W`;
//! - [`factor`]: distributions of the common factor and the univariate
//!   marginal of `W`, with closed forms where they exist;
//! - [`copula`]: joint and copula densities (closed form or one-dimensional
//!   quadrature) and the replicated log-likelihood;
//! - [`inference`]: rank and parametric marginal transforms, pseudo and full
//!   likelihoods, quasi-Newton fitting and standard errors;
//! - [`prediction`]: conditional distributions at unobserved sites and
//!   quantile/mean interpolation;
//! - [`tail`]: finite-level and limiting tail-dependence measures, asymmetry
//!   and skewness diagnostics;
//! - [`simulation`]: exact sampling and seeded replicated study harnesses;
//! - [`numerics`]: the scalar/matrix toolbox everything else is built on.
//!
//! The crate is `no_std` (with `alloc`) so the numerical core stays free of
//! platform dependencies; all I/O lives in companion crates.

#![no_std]
#![deny(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;


pub mod copula;
pub mod error;
pub mod factor;

pub mod inference;
pub mod numerics;
pub mod prediction;
pub mod simulation;
pub mod spatial;
pub mod tail;


pub use error::{Error, Result};
