//! Finite-strain topology optimization with nonlinear stability constraints.
//!
//! The crate covers the full design pipeline for 2D plane-strain continua:
//!
//! * density-based design parameterization (SIMP, density filter, symmetry
//!   reduction) — [`model`]
//! * regularized neo-Hookean constitutive kernels with linear energy
//!   interpolation for void elements — [`material`]
//! * Q4 total-Lagrangian finite elements, Newton–Raphson equilibrium solves
//!   with adaptive stepping and adaptive interpolation cutoff — [`fem`]
//! * stability eigenanalysis of the tangent stiffness with a diagonal
//!   pseudo-mass that suppresses spurious void modes — [`stability`]
//! * adjoint sensitivities of end compliance and simple eigenvalues, and
//!   directional derivatives of repeated eigenvalues — [`sensitivity`]
//! * MMA-driven optimization with an outer design loop and an inner
//!   increment loop for repeated-eigenvalue iterations — [`optimizer`]
//! * post-analysis path following: cylindrical arc-length continuation,
//!   critical-point detection, branch switching and branch-connecting-curve
//!   traversal — [`continuation`]
//!
//! Element-level work is data-parallel and runs on rayon when the `parallel`
//! feature (default) is enabled; disabling it falls back to sequential
//! iterators with identical results.

pub mod error;
pub mod linalg;
pub mod material;
pub mod model;
pub mod par;

pub mod continuation;
pub mod fem;
pub mod optimizer;
pub mod sensitivity;
pub mod stability;

pub use nalgebra;

pub use error::{Error, Result};
pub use fem::{EquilibriumState, SolverOptions};
pub use model::{DesignField, LoadSpec, Model, SupportSpec, SymmetrySpec};
