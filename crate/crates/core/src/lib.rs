//! Sampling-weighted pseudo-posterior inference for finite populations
//! observed through informative survey designs.
//!
//! The crate is organised around the pieces of a design-based Monte Carlo
//! study:
//!
//! - [`population`]: synthetic finite populations drawn from a multivariate
//!   Poisson-lognormal regression, plus CSV/JSON persistence.
//! - [`design`]: pps, Poisson and SRS designs, inclusion probabilities,
//!   sample draws and weight normalisation.
//! - [`mcmc`]: Cholesky kernels and the multivariate normal, matrix normal,
//!   Wishart and elliptical slice samplers.
//! - [`model`]: the Gibbs sampler for the pseudo-posterior of the
//!   Poisson-lognormal model.
//! - [`diagnostics`]: design conditions, Hellinger and pseudo-Hellinger
//!   distances, contraction curves.
//! - [`simulation`]: the replicated study comparing weighted, unweighted and
//!   SRS estimators against the full-population posterior.

pub mod design;
pub mod diagnostics;
pub mod error;
pub mod mcmc;
pub mod model;
pub mod population;
pub mod quadrature;
pub mod rng;
mod serde_matrix;
pub mod simulation;
pub mod stats;

pub use error::{Error, Result};
