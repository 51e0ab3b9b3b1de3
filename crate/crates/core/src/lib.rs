//! Symmetry-reduced Einstein Dehn filling.
//!
//! The crate works with torus-invariant metrics `ds² + Σ fᵢ(s)² dxᵢ²` on a
//! radial grid. It provides the black-hole cap and the hyperbolic cusp in
//! closed form, the cohomogeneity-one Einstein residual and its analytic
//! linearization, Euler-ODE asymptotics for the cusp variations, the glued
//! almost-Einstein profile with its weighted norms, and a banded Newton
//! solver that drives the glued profile to a discrete Einstein metric.
//!
//! Module map:
//!
//! - [`geometry`]: model metrics, curvatures, arclength map, cap sizing.
//! - [`operator`]: Einstein residual, linearization, component ODEs, gauge.
//! - [`asymptotics`]: indicial roots, kernel classification, decay harness.
//! - [`gluing`]: cutoffs, the glued profile, weights and `*`/`**` norms.
//! - [`solver`]: Jacobian assembly, Newton / frozen-Jacobian iteration,
//!   singular-value probes.
//! - [`cli`]: the command-line front end used by the `dehnfill` binary.

// NaN-rejecting `!(a < b)` guards and index loops over parallel arrays are intended.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod asymptotics;
pub mod cli;
pub mod error;
pub mod geometry;
pub mod gluing;
pub mod numerics;
pub mod operator;
pub mod solver;

pub use error::{Error, Result};
pub use geometry::{Dimension, DiagonalMetricProfile, RadialGrid};
