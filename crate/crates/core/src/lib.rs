//! Kinetic simulator for the perturbed Boltzmann equation on the torus in the
//! diffusive (Knudsen) scaling
//!
//! ∂_t h + ε⁻¹ v·∇_x h = ε⁻² L h + ε⁻¹ Q(h, h),
//!
//! with the tools needed to study it: collision operators by direct
//! quadrature, the linearized operator and its splitting, semigroup and
//! nonlinear time stepping, and the incompressible Navier–Stokes limit.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod collision;
pub mod dense;
pub mod error;
pub mod evolve;
pub mod fields;
pub mod grid;
pub mod hydro;
pub mod interp;
pub mod linop;

pub use error::{Error, Result};
