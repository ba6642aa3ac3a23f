//! Candidate optimal m-sheets: harmonic maps, minimal graphs and generic
//! steepest ascent on a discrete functional.
//!
//! All solvers are sequential and sweep nodes in lexicographic order, so
//! identical inputs give bitwise-identical outputs.

mod ascent;
mod harmonic;
mod minimal;
mod stencil;

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mtgrid::{Field, Grid};

pub use ascent::descend_functional;
pub use harmonic::solve_harmonic;
pub use minimal::{graph_sheet, solve_minimal_graph};

#[derive(Debug, Clone, Serialize)]
pub struct SolveOptions {
    pub max_iterations: usize,
    /// Target sup-norm of the Euler-Lagrange residual.
    pub tolerance: f64,
    /// SOR factor in (0, 2); `None` picks the optimal factor of the
    /// constant-coefficient Laplacian on the grid.
    pub relaxation_factor: Option<f64>,
    /// Initial step of the steepest-ascent line search.
    pub step_size: f64,
    pub verbosity: u8,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_iterations: 20_000,
            tolerance: 1e-8,
            relaxation_factor: None,
            step_size: 1.0,
            verbosity: 0,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(Error::InvalidOptions(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidOptions("max_iterations must be at least 1".into()));
        }
        if let Some(w) = self.relaxation_factor {
            if !(w > 0.0 && w < 2.0) {
                return Err(Error::InvalidOptions(format!(
                    "relaxation factor must lie in (0, 2), got {w}"
                )));
            }
        }
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(Error::InvalidOptions(format!(
                "step size must be positive, got {}",
                self.step_size
            )));
        }
        Ok(())
    }

    fn omega(&self, grid: &Grid) -> f64 {
        self.relaxation_factor.unwrap_or_else(|| optimal_sor_factor(grid))
    }
}

/// `2 / (1 + sqrt(1 - rho^2))` with `rho` the Jacobi spectral radius of the
/// compact Laplacian on `grid`.
pub fn optimal_sor_factor(grid: &Grid) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (&h, &r) in grid.spacing().iter().zip(grid.resolution()) {
        let w = 1.0 / (h * h);
        num += w * (std::f64::consts::PI / (r - 1) as f64).cos();
        den += w;
    }
    let rho = num / den;
    2.0 / (1.0 + (1.0 - rho * rho).max(0.0).sqrt())
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveResult {
    #[serde(skip)]
    pub x: Field,
    #[serde(skip)]
    pub u: Field,
    pub iterations: usize,
    pub final_residual: f64,
    pub converged: bool,
    pub stalled: bool,
    /// Discrete functional value (with its leading minus sign) after each
    /// iteration, starting with the initial guess.
    pub objective_history: Vec<f64>,
}

impl SolveResult {
    /// JSON sidecar `{iterations, final_residual, converged, stalled,
    /// objective_history}`.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("result is plain data")
    }

    pub fn write_field_csv<W: Write>(&self, w: W) -> Result<()> {
        self.x.write_csv(w)
    }
}

/// Fills interior nodes of `boundary` with the average over axes of the
/// linear interpolation between the two boundary nodes on each axis line.
pub fn boundary_interpolant(boundary: &Field) -> Result<Field> {
    let grid = boundary.grid();
    let k = boundary.components();
    let mut out = boundary.values().to_vec();
    let m = grid.dim();
    for node in grid.interior_nodes() {
        for c in 0..k {
            let mut acc = 0.0;
            for a in 0..m {
                let i = grid.axis_index(node, a);
                let r = grid.resolution()[a];
                let s = grid.stride(a);
                let lo = node - i * s;
                let hi = lo + (r - 1) * s;
                let w = i as f64 / (r - 1) as f64;
                acc += (1.0 - w) * boundary.value(lo, c) + w * boundary.value(hi, c);
            }
            out[node * k + c] = acc / m as f64;
        }
    }
    Field::new(grid, boundary.rank(), out)
}
