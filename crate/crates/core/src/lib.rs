//! Numerical laboratory for the energy `J(u) = ∫ ½|Du|² + σ(u)` on one- and
//! two-dimensional dyadic grids.
//!
//! * [`potential`]: σ families, their moduli, scaling and affine conjugation.
//! * [`field`]: lattice fields, balls, norms, exact dyadic rescaling, CSV.
//! * [`solver`]: discrete energy, minimization, harmonic replacement.
//! * [`renorm`]: the dyadic renormalization building the C¹ modulus ω.
//! * [`estimate`]: growth fits, seminorms and flatness calibration.
//! * [`cli`]: configuration-driven pipelines and run records.

pub mod cli;
pub mod error;
pub mod estimate;
pub mod field;
mod numeric;
pub mod potential;
pub mod renorm;
pub mod solver;

/// A point of ℝ¹ or ℝ². In one dimension the second coordinate is 0.
pub type Point = [f64; 2];

pub use error::{Error, Result};
pub use field::{BallSpec, GridSpec, Region, ScalarField};
pub use potential::{Affine, Family, ModulusDescriptor, PotentialSpec};
pub use renorm::ModulusTable;
pub use solver::{MinimizeOptions, MinimizeResult};
