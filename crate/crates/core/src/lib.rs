//! Two-stage doubly-robust Bayesian pipeline for individualized treatment
//! rules (ITRs) pooled across studies.
//!
//! Stage one ([`bbdwols`]) turns one study's individual-level data into a
//! posterior sample of its blip parameters using the Bayesian bootstrap over
//! dynamic weighted ordinary least squares, with inverse-probability weights
//! for treatment assignment and missing-at-random outcomes. Stage two
//! ([`nma`]) pools those study-level posteriors in a consistency-constrained
//! network meta-analysis and exposes the meta-population relative effects
//! for arbitrary covariate profiles.
//!
//! The numerical core is generic over the floating-point type through
//! [`Scalar`]; the `*F64` aliases below are what the CLI and the HTTP
//! service use.

pub mod bbdwols;
pub mod data;
pub mod design;
pub mod error;
pub mod glm;
pub mod io;
pub mod linalg;
pub mod netmap;
pub mod nma;
pub mod rng;
pub mod scalar;
pub mod simlab;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Blip-parameter posterior from stage one, in double precision.
pub type BlipPosteriorF64 = bbdwols::BlipPosterior<f64>;
/// Stage-two posterior, in double precision.
pub type NmaPosteriorF64 = nma::NmaPosterior<f64>;
/// Design matrices, in double precision.
pub type DesignMatricesF64 = design::DesignMatrices<f64>;
/// Weighted GLM fit, in double precision.
pub type WeightedGlmFitF64 = glm::WeightedGlmFit<f64>;
/// Single precision variants, mostly useful for memory-bound batch work.
pub type BlipPosteriorF32 = bbdwols::BlipPosterior<f32>;
pub type NmaPosteriorF32 = nma::NmaPosterior<f32>;
