use log::{debug, info};

use crate::error::{Error, Result};
use crate::mtgrid::{jacobian, Field, Grid, KuhnComplex};
use crate::solvers::stencil::Stencil;
use crate::solvers::{boundary_interpolant, SolveOptions, SolveResult};
use crate::variational::{state_dims, DiscreteFunctional, DomainMetric, LagrangianSpec, TargetMetric};

/// Harmonic map with flat target: SOR on `D_a(h^{ab} d_b x^i) = 0`.
///
/// Only the boundary nodes of `boundary` are read. The returned residual is
/// the energy Euler-Lagrange residual of the iterate.
pub fn solve_harmonic(
    grid: &Grid,
    boundary: &Field,
    h: &DomainMetric,
    g: &TargetMetric,
    opts: &SolveOptions,
) -> Result<SolveResult> {
    opts.validate()?;
    if boundary.grid() != grid {
        return Err(Error::GridMismatch);
    }
    let n = state_dims(boundary)?;
    let spec = LagrangianSpec::energy()
        .with_domain_metric(h.clone())
        .with_target_metric(g.clone());
    let functional = DiscreteFunctional::new(&spec, grid, n)?;
    let gd = g.diagonal(n);

    let complex = KuhnComplex::new(grid);
    let m = grid.dim();
    let metric = match h {
        DomainMetric::Identity => Vec::new(),
        other => {
            let nodal = other.nodal(grid)?;
            let mut per = vec![0.0; complex.simplices().len() * m * m];
            for (k, s) in complex.simplices().iter().enumerate() {
                complex.average(s, &nodal, m * m, &mut per[k * m * m..(k + 1) * m * m]);
            }
            per
        }
    };
    let weights = vec![1.0; complex.simplices().len()];
    let stencil = Stencil::assemble(&complex, &weights, &metric);
    let free: Vec<usize> = grid.interior_nodes().collect();
    let mass = complex.lumped_mass();
    let omega = opts.omega(grid);

    let mut x = boundary_interpolant(boundary)?.into_values();
    let mut history = vec![functional.value(&x)?];
    let mut residual = stencil.residual(&x, n, &free, mass, &gd);
    let mut iterations = 0;
    while residual > opts.tolerance && iterations < opts.max_iterations {
        stencil.sor_sweep(&mut x, n, omega, &free);
        iterations += 1;
        residual = stencil.residual(&x, n, &free, mass, &gd);
        history.push(functional.value(&x)?);
        if !residual.is_finite() {
            return Err(Error::Divergence(format!("non-finite residual after {iterations} sweeps")));
        }
        debug!("harmonic sweep {iterations}: residual {residual:e}");
    }
    let converged = residual <= opts.tolerance;
    if opts.verbosity > 0 {
        info!("harmonic solve: {iterations} sweeps, residual {residual:e}, converged {converged}");
    }
    let x = Field::new(grid, boundary.rank(), x)?;
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mtgrid::Rank;
    use crate::variational::el_residual;

    fn square(r: usize) -> Grid {
        Grid::new(&[1.0, 1.0], &[r, r]).unwrap()
    }

    fn opts(tol: f64) -> SolveOptions {
        SolveOptions {
            tolerance: tol,
            ..Default::default()
        }
    }

    #[test]
    fn quadratic_is_reproduced() {
        let g = square(17);
        let exact = Field::scalar_from_fn(&g, |t| t[0] * t[0] - t[1] * t[1]).unwrap();
        let r = solve_harmonic(&g, &exact, &DomainMetric::Identity, &TargetMetric::Identity, &opts(1e-11)).unwrap();
        assert!(r.converged);
        assert!(r.x.sub(&exact).unwrap().sup_norm() < 1e-10);
        for w in r.objective_history.windows(2) {
            assert!(w[1] >= w[0] - 1e-12);
        }
        let el = el_residual(&LagrangianSpec::energy(), &r.x).unwrap();
        assert!((el.sup_norm() - r.final_residual).abs() < 1e-12);
    }

    #[test]
    fn affine_and_constant_boundaries() {
        let g = Grid::new(&[1.0, 2.0, 1.0], &[6, 7, 5]).unwrap();
        let affine = Field::from_fn(&g, Rank::Vector(2), |t, o| {
            o[0] = 1.0 + t[0] - t[1] + 3.0 * t[2];
            o[1] = 4.0;
        })
        .unwrap();
        let r = solve_harmonic(&g, &affine, &DomainMetric::Identity, &TargetMetric::Diagonal(vec![2.0, 1.0]), &opts(1e-10))
            .unwrap();
        assert!(r.converged);
        assert!(r.x.sub(&affine).unwrap().sup_norm() < 1e-9);
    }

    #[test]
    fn variable_metric_residual_matches_el() {
        let g = square(9);
        let h = Field::from_fn(&g, Rank::Matrix(2), |t, o| o.copy_from_slice(&[1.0 + t[0], 0.2, 0.2, 1.5])).unwrap();
        let h = DomainMetric::Field(h);
        let b = Field::scalar_from_fn(&g, |t| (2.0 * t[0]).sin() + t[1]).unwrap();
        let r = solve_harmonic(&g, &b, &h, &TargetMetric::Identity, &opts(1e-10)).unwrap();
        assert!(r.converged);
        let spec = LagrangianSpec::energy().with_domain_metric(h);
        let el = el_residual(&spec, &r.x).unwrap();
        assert!(el.sup_norm() <= 1e-10);
        // discrete maximum principle does not need h = I here, but check the hull anyway
        let lo = g.boundary_nodes().map(|n| b.value(n, 0)).fold(f64::INFINITY, f64::min);
        let hi = g.boundary_nodes().map(|n| b.value(n, 0)).fold(f64::NEG_INFINITY, f64::max);
        assert!(r.x.values().iter().all(|v| *v >= lo - 1e-9 && *v <= hi + 1e-9));
    }

    #[test]
    fn budget_exhaustion_is_reported_not_raised() {
        let g = square(17);
        let b = Field::scalar_from_fn(&g, |t| (t[0] * 5.0).sin()).unwrap();
        let o = SolveOptions {
            max_iterations: 2,
            tolerance: 1e-12,
            ..Default::default()
        };
        let r = solve_harmonic(&g, &b, &DomainMetric::Identity, &TargetMetric::Identity, &o).unwrap();
        assert!(!r.converged);
        assert_eq!(r.iterations, 2);
    }
}
