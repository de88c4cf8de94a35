//! Simulation and verification toolkit for convex gradient Gibbs measures.
//!
//! The crate samples `∇φ` interface models by Langevin dynamics, runs random
//! walks in the dynamic environment `U″(∇φ)`, solves lattice potential theory
//! with signed potentials, samples interlacement-style trajectory soups and
//! checks the isomorphism and scaling-limit identities against deterministic
//! oracles.

pub mod error;
pub mod field;
pub mod green;
pub mod harness;
pub mod lattice;
pub mod potential;
pub mod rng;
pub mod runner;
pub mod soup;
pub mod stats;
pub mod walk;

pub use error::{Error, Result};
pub use field::{ChainConfig, FieldState, Integrator, Observable, Sampler, SiteMap, TiltSpec};
pub use lattice::{cell_of, Boundary, Domain, Site};
pub use potential::Potential;
pub use stats::Estimate;
