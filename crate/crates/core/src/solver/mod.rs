//! Discrete energy, minimization and the harmonic-replacement toolkit.
//!
//! The discrete energy of `u` on a region `R` is
//!
//! ```text
//! E(u; R) = Σ_{edges pq ⊂ R} h^{n-2} · ½ (u_p − u_q)²  +  Σ_{cells c ⊂ R} hⁿ · 2⁻ⁿ Σ_{k ∈ c} σ(x_k, u_k)
//! ```
//!
//! where an edge or cell belongs to `R` when all of its nodes do. σ enters
//! through the corner values, so for one-phase σ the truncation `u₊` never
//! raises the potential term and never raises the Dirichlet term. The quadratic part
//! is the form whose Euler–Lagrange operator is the 3-point (1D) or 5-point
//! (2D) Laplacian, so the harmonic replacement is orthogonal to its defect in
//! exact arithmetic.

mod descent;
mod energy;
mod lemmas;
mod linear;

pub use descent::{minimize, Diagnostics, MinimizeOptions, MinimizeResult};
pub use energy::{dirichlet_integral, discrete_energy};
pub use lemmas::{
    campanato_decay, check_replacement_identity, harmonic_replacement, sup_l2_constant,
    ReplacementReport,
};
pub use linear::harmonic_extension;
pub(crate) use lemmas::gradient_oscillation;
