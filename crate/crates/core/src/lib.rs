//! Numerical laboratory for multitime optimal control.
//!
//! The crate solves the two classical variational problems that arise as
//! interior solutions of multitime control problems (minimal graphs and
//! harmonic maps), verifies maximum-principle certificates for candidate
//! solutions, reproduces the isoperimetric sphere result by flux quadrature,
//! and synthesizes bang-bang controls for multitime linear flows.
//!
//! Module map:
//!
//! - [`mtgrid`]: lattices, fields, finite differences, staircase paths and the
//!   simplicial (Kuhn) decomposition used by the discrete functionals.
//! - [`integrability`]: closedness checks for controls and Lagrangian 1-forms.
//! - [`variational`]: cost densities, Euler-Lagrange residuals, costates and
//!   the maximum-principle certificate.
//! - [`solvers`]: harmonic and minimal-graph relaxation, generic ascent.
//! - [`isoperimetric`]: closed surfaces, flux volume, matched-area scans.
//! - [`bangbang`]: linear multitime flows, costates and switching synthesis.
//! - [`expr`]: the restricted expression grammar used for boundary data and
//!   custom Lagrangians.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod bangbang;
pub mod error;
pub mod expr;
pub mod integrability;
pub mod isoperimetric;
pub mod mtgrid;
pub mod solvers;
pub mod variational;

pub use error::{Error, Result};
