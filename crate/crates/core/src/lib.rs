//! Deterministic simulation of decentralized resource allocation under Byzantine attacks.
//!
//! Honest agents run a dual decomposition method: each computes its local allocation
//! from its copy of the dual variable (the shadow price), takes a dual gradient step and
//! mixes the result with its neighbors. Byzantine agents can send arbitrary dual
//! messages; the resilient variant replaces plain weighted averaging by a robust
//! aggregation rule (trimmed mean, iterative outlier scissor or self-centered clipping).
//!
//! Modules:
//! - [`problem`]: costs, boxes and the per-agent primal/dual maps
//! - [`graph`]: topologies, mixing matrices and spectral diagnostics
//! - [`aggregation`]: robust aggregation rules and a contraction-constant estimator
//! - [`attacks`]: Byzantine message generators
//! - [`oracle`]: exact reference solutions by per-dimension bisection
//! - [`engine`]: the synchronous attack-free and resilient iterations with metrics
//! - [`theory`]: constants, convergence radii and step-size admissibility checks

pub mod aggregation;
pub mod attacks;
pub mod engine;
pub mod error;
pub mod graph;
pub mod oracle;
pub mod problem;
pub mod rng;
pub mod theory;

pub use error::{Error, Result};
