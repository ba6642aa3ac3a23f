use log::{debug, info};

use crate::error::{Error, Result};
use crate::mtgrid::{jacobian, Field};
use crate::solvers::{SolveOptions, SolveResult};
use crate::variational::{state_dims, DiscreteFunctional, LagrangianSpec};

const MAX_HALVINGS: usize = 60;
const NOISE: f64 = 1e-13;
const ARMIJO: f64 = 1e-4;

/// Steepest ascent on the discrete functional of `spec`.
///
/// The ascent direction is the Euler-Lagrange residual (the functional
/// gradient over lumped mass) on free nodes. A trial step is halved until
/// the objective increases by at least `1e-4 * step * <d, M d>` and doubled
/// after every accepted step; 60 failed halvings stop the run with
/// `stalled = true`. When the change in objective is within 1e-13 relative
/// (its rounding band) the step is judged by the trapezoid integral of the
/// directional derivative instead, so accepted steps never lower the
/// objective by more than that band. Nodes flagged in `fixed` and all
/// boundary nodes keep their initial values.
pub fn descend_functional(spec: &LagrangianSpec, x0: &Field, fixed: &[bool], opts: &SolveOptions) -> Result<SolveResult> {
    opts.validate()?;
    let grid = x0.grid();
    if fixed.len() != grid.node_count() {
        return Err(Error::ShapeMismatch {
            expected: grid.node_count(),
            found: fixed.len(),
        });
    }
    let n = state_dims(x0)?;
    let functional = DiscreteFunctional::new(spec, grid, n)?;
    let free: Vec<bool> = (0..grid.node_count())
        .map(|v| !fixed[v] && !grid.is_boundary(v))
        .collect();

    let direction = |x: &[f64]| -> Result<(Vec<f64>, f64)> {
        let mut d = functional.el(x)?;
        let mut worst: f64 = 0.0;
        for (v, chunk) in d.chunks_mut(n).enumerate() {
            if free[v] {
                worst = chunk.iter().fold(worst, |a, c| a.max(c.abs()));
            } else {
                chunk.fill(0.0);
            }
        }
        Ok((d, worst))
    };

    let mass = functional.lumped_mass();
    let mut x = x0.values().to_vec();
    let mut value = functional.value(&x)?;
    let mut history = vec![value];
    let (mut d, mut residual) = direction(&x)?;
    let mut step = opts.step_size;
    let mut iterations = 0;
    let mut stalled = false;
    let mut trial = vec![0.0; x.len()];
    while residual > opts.tolerance && iterations < opts.max_iterations {
        let slope: f64 = d.chunks(n).zip(mass).map(|(a, w)| w * a.iter().map(|p| p * p).sum::<f64>()).sum();
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            for ((t, xi), di) in trial.iter_mut().zip(&x).zip(&d) {
                *t = xi + step * di;
            }
            // a degenerate trial (e.g. a collapsed parametric sheet) is just a failed step
            let v = match functional.value(&trial) {
                Ok(v) => v,
                Err(Error::DegenerateMetric { .. }) => {
                    step *= 0.5;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let band = NOISE * (1.0 + value.abs());
            if v - value > band && v - value >= ARMIJO * step * slope {
                accepted = Some((v, None));
                break;
            }
            // Near convergence the gain drops below the rounding of the
            // functional. Within that noise band, decide by the trapezoid
            // integral of the directional derivative along the step, which
            // is exact for quadratic functionals.
            if (v - value).abs() <= band {
                let (dt, rt) = direction(&trial)?;
                let gain: f64 = d
                    .chunks(n)
                    .zip(dt.chunks(n))
                    .zip(mass)
                    .map(|((a, b), w)| w * a.iter().zip(b).map(|(p, q)| p * (p + q)).sum::<f64>())
                    .sum::<f64>()
                    * 0.5
                    * step;
                if gain >= ARMIJO * step * slope {
                    accepted = Some((v, Some((dt, rt))));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((v, next)) = accepted else {
            stalled = true;
            break;
        };
        std::mem::swap(&mut x, &mut trial);
        value = v;
        history.push(value);
        iterations += 1;
        step *= 2.0;
        (d, residual) = match next {
            Some(pair) => pair,
            None => direction(&x)?,
        };
        debug!("ascent step {iterations}: objective {value:.16e}, residual {residual:e}");
    }
    let converged = residual <= opts.tolerance;
    if opts.verbosity > 0 {
        info!("ascent: {iterations} steps, residual {residual:e}, converged {converged}, stalled {stalled}");
    }
    let x = Field::new(grid, x0.rank(), x)?;
    Ok(SolveResult {
        u: jacobian(&x)?,
        x,
        iterations,
        final_residual: residual,
        converged,
        stalled,
        objective_history: history,
    })
}
