use log::{debug, info};

use crate::error::{Error, Result};
use crate::mtgrid::{jacobian, Field, Grid, KuhnComplex, Rank};
use crate::solvers::stencil::Stencil;
use crate::solvers::{boundary_interpolant, SolveOptions, SolveResult};
use crate::variational::{DiscreteFunctional, LagrangianSpec};

const GRADIENT_LIMIT: f64 = 1e6;
const MAX_INNER_SWEEPS: usize = 20_000;

/// Minimal graph `x = (t, f(t))` with prescribed boundary heights.
///
/// Lagged-coefficient (Kacanov) iteration: freeze `W = sqrt(1 + |grad f|^2)`
/// on every simplex, relax the weighted Laplace problem `div(grad f / W) = 0`
/// by SOR, refreeze. Each outer step minimizes a quadratic majorant of the
/// area, so the area never increases even when the inner solve is inexact.
/// `iterations` counts outer steps; convergence is judged on the graph-area
/// Euler-Lagrange residual.
pub fn solve_minimal_graph(grid: &Grid, boundary: &Field, opts: &SolveOptions) -> Result<SolveResult> {
    opts.validate()?;
    if boundary.grid() != grid {
        return Err(Error::GridMismatch);
    }
    if boundary.rank() != Rank::Scalar && boundary.rank() != Rank::Vector(1) {
        return Err(Error::RankMismatch {
            expected: "scalar".into(),
            found: boundary.rank().to_string(),
        });
    }
    let m = grid.dim();
    let spec = LagrangianSpec::graph_area();
    let functional = DiscreteFunctional::new(&spec, grid, 1)?;
    let complex = KuhnComplex::new(grid);
    let free: Vec<usize> = grid.interior_nodes().collect();
    let mass = complex.lumped_mass();
    let omega = opts.omega(grid);

    let el_sup = |f: &[f64]| -> Result<f64> {
        let el = functional.el(f)?;
        Ok(el.iter().fold(0.0f64, |a, v| a.max(v.abs())))
    };

    let mut f = boundary_interpolant(boundary)?.into_values();
    let mut history = vec![functional.value(&f)?];
    let mut residual = el_sup(&f)?;
    let mut iterations = 0;
    let mut grad = vec![0.0; m];
    let mut weights = vec![0.0; complex.simplices().len()];
    while residual > opts.tolerance && iterations < opts.max_iterations {
        for (k, s) in complex.simplices().iter().enumerate() {
            complex.simplex_jacobian(s, &f, 1, &mut grad);
            let g2: f64 = grad.iter().map(|v| v * v).sum();
            if g2.sqrt() > GRADIENT_LIMIT || !g2.is_finite() {
                return Err(Error::Divergence(format!(
                    "gradient {:e} exceeds {GRADIENT_LIMIT:e} near node {:?}",
                    g2.sqrt(),
                    grid.multi_index(s.vertices[0])
                )));
            }
            weights[k] = 1.0 / (1.0 + g2).sqrt();
        }
        let stencil = Stencil::assemble(&complex, &weights, &[]);
        let inner_target = (0.1 * residual).max(0.1 * opts.tolerance);
        let mut sweeps = 0;
        while sweeps < MAX_INNER_SWEEPS && stencil.residual(&f, 1, &free, mass, &[1.0]) > inner_target {
            stencil.sor_sweep(&mut f, 1, omega, &free);
            sweeps += 1;
        }
        iterations += 1;
        residual = el_sup(&f)?;
        history.push(functional.value(&f)?);
        debug!("minimal graph step {iterations}: {sweeps} sweeps, residual {residual:e}");
    }
    let converged = residual <= opts.tolerance;
    if opts.verbosity > 0 {
        info!("minimal graph: {iterations} outer steps, residual {residual:e}, converged {converged}");
    }
    let x = Field::new(grid, boundary.rank(), f)?;
    Ok(SolveResult {
        u: jacobian(&x)?,
        x,
        iterations,
        final_residual: residual,
        converged,
        stalled: false,
        objective_history: history,
    })
}

/// The parametric sheet `(t^1, .., t^m, f(t))` of a scalar height field.
pub fn graph_sheet(f: &Field) -> Result<Field> {
    let grid = f.grid();
    let m = grid.dim();
    let mut values = Vec::with_capacity(grid.node_count() * (m + 1));
    for node in 0..grid.node_count() {
        values.extend(grid.coords(node));
        values.push(f.value(node, 0));
    }
    Field::new(grid, Rank::Vector(m + 1), values)
}
