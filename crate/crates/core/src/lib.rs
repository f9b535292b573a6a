//! Conforming finite elements for the stationary Joule heating problem.
//!
//! The electric potential `phi` and the temperature `u` solve
//!
//! ```text
//!   -div(sigma(u) grad phi) = 0
//!   -lap u                  = sigma(u) |grad phi|^2
//! ```
//!
//! with Dirichlet/Neumann conditions for `phi` and Dirichlet/Robin conditions for `u`.
//! The discrete problem uses the cutoff-regularised weak form, is solved with a decoupled
//! fixed-point (Picard) iteration, and can be driven by residual error indicators through
//! a solve-estimate-mark-refine loop.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops mirror the formulas in the element kernels.
#![allow(clippy::needless_range_loop)]

pub mod adapt;
pub mod assembly;
pub mod cli;
pub mod config;
pub mod error;
pub mod estimate;
pub mod expr;
pub mod linalg;
pub mod mesh;
pub mod problem;
pub mod quadrature;
pub mod solver;
pub mod space;
pub mod verify;

pub use error::{Error, Result};

/// Point in physical space. Two-dimensional meshes keep `z = 0`.
pub type Point = [f64; 3];

pub(crate) fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn sub(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn norm3(a: &[f64; 3]) -> f64 {
    dot(a, a).sqrt()
}
