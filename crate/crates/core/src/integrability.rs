//! Complete-integrability (closedness) checks.
//!
//! A gradient-type control `u^i_alpha` is admissible when its mixed partials
//! commute, `d u^i_alpha / d t^beta = d u^i_beta / d t^alpha`, and a
//! Lagrangian 1-form `L_alpha dt^alpha` is closed when
//! `d L_alpha / d t^beta = d L_beta / d t^alpha`. Both are checked pointwise
//! with the central stencils of [`crate::mtgrid`] and reported in sup-norm.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mtgrid::{partial_derivative, path_integral, staircase_path, Field, PathPattern, Rank, Scheme};

#[derive(Debug, Clone, Serialize)]
pub struct IntegrabilityReport {
    pub max_residual: f64,
    #[serde(skip)]
    pub residual_field: Field,
    pub pass: bool,
    pub tolerance: f64,
}

impl IntegrabilityReport {
    fn from_field(residual_field: Field, tolerance: f64) -> Self {
        let max_residual = residual_field.sup_norm();
        Self {
            max_residual,
            pass: max_residual <= tolerance,
            residual_field,
            tolerance,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("report is plain data")
    }
}

/// Symmetry of mixed partials of a jacobian-rank control.
pub fn check_closed_control(u: &Field, tol: f64) -> Result<IntegrabilityReport> {
    let (m, n) = match u.rank() {
        Rank::Jacobian { m, n } => (m, n),
        other => {
            return Err(Error::RankMismatch {
                expected: "jacobian".into(),
                found: other.to_string(),
            })
        }
    };
    let grid = u.grid();
    let columns: Vec<Field> = (0..m).map(|a| axis_block(u, a, n)).collect::<Result<_>>()?;
    let mut residual = vec![0.0; grid.node_count()];
    for a in 0..m {
        for b in a + 1..m {
            let dab = partial_derivative(&columns[a], b, Scheme::Central)?;
            let dba = partial_derivative(&columns[b], a, Scheme::Central)?;
            for node in 0..grid.node_count() {
                for i in 0..n {
                    let r = (dab.value(node, i) - dba.value(node, i)).abs();
                    residual[node] = f64::max(residual[node], r);
                }
            }
        }
    }
    Ok(IntegrabilityReport::from_field(
        Field::new(grid, Rank::Scalar, residual)?,
        tol,
    ))
}

/// Closedness of the 1-form `L_alpha dt^alpha` given as `m` scalar fields.
pub fn check_closed_oneform(l: &[Field], tol: f64) -> Result<IntegrabilityReport> {
    let grid = validate_form(l)?;
    let m = grid.dim();
    let mut residual = vec![0.0; grid.node_count()];
    for a in 0..m {
        for b in a + 1..m {
            let dab = partial_derivative(&l[a], b, Scheme::Central)?;
            let dba = partial_derivative(&l[b], a, Scheme::Central)?;
            for (r, (x, y)) in residual.iter_mut().zip(dab.values().iter().zip(dba.values())) {
                *r = f64::max(*r, (x - y).abs());
            }
        }
    }
    Ok(IntegrabilityReport::from_field(
        Field::new(&grid, Rank::Scalar, residual)?,
        tol,
    ))
}

/// Gap between the curvilinear integrals along the two extreme axis-major
/// staircases (axes in natural order versus reversed order).
pub fn path_independence_residual(l: &[Field], target: &[usize]) -> Result<f64> {
    let grid = validate_form(l)?;
    let m = grid.dim();
    let a = staircase_path(&grid, target, &PathPattern::forward(m))?;
    let b = staircase_path(&grid, target, &PathPattern::reversed(m))?;
    Ok((path_integral(l, &a)? - path_integral(l, &b)?).abs())
}

fn validate_form(l: &[Field]) -> Result<crate::mtgrid::Grid> {
    let first = l.first().ok_or(Error::ShapeMismatch {
        expected: 1,
        found: 0,
    })?;
    let grid = first.grid().clone();
    if l.len() != grid.dim() {
        return Err(Error::ShapeMismatch {
            expected: grid.dim(),
            found: l.len(),
        });
    }
    for f in l {
        if f.grid() != &grid {
            return Err(Error::GridMismatch);
        }
        if f.rank() != Rank::Scalar {
            return Err(Error::RankMismatch {
                expected: "scalar".into(),
                found: f.rank().to_string(),
            });
        }
    }
    Ok(grid)
}

/// The `n` entries `u^i_alpha` for fixed `alpha` as a vector field.
fn axis_block(u: &Field, alpha: usize, n: usize) -> Result<Field> {
    let k = u.components();
    let values = u
        .values()
        .chunks(k)
        .flat_map(|c| c[alpha * n..(alpha + 1) * n].iter().copied())
        .collect();
    Field::new(u.grid(), Rank::Vector(n), values)
}
