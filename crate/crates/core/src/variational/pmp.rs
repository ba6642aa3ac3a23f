use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::integrability::check_closed_control;
use crate::mtgrid::{jacobian, Field, Grid};
use crate::variational::discrete::nodal_domain_metric;
use crate::variational::{
    costate_from_criticality, jacobian_dims, state_dims, DiscreteFunctional, LagrangianSpec,
};

/// Tolerances of the certificate. `criticality` is relative: the check is
/// `residual <= criticality * (1 + |p|_inf)`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PmpTolerances {
    pub criticality: f64,
    pub adjoint: f64,
    pub integrability: f64,
    pub state: f64,
    pub boundary: f64,
    pub require_concavity: bool,
}

impl PmpTolerances {
    /// Same absolute tolerance for the adjoint, integrability, state and
    /// boundary residuals; relative 1e-8 for criticality.
    pub fn uniform(tol: f64) -> Self {
        Self {
            criticality: 1e-8,
            adjoint: tol,
            integrability: tol,
            state: tol,
            boundary: tol,
            require_concavity: true,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PmpReport {
    pub criticality_residual: f64,
    pub adjoint_residual: f64,
    pub integrability_residual: f64,
    /// `sup |u - Jacobian(x)|`: the state equation `dx/dt^a = u_a`.
    pub state_residual: f64,
    pub concavity: bool,
    pub boundary_residual: Option<f64>,
    /// `sup |adjoint - el|` over interior nodes; an identity, so always tiny.
    pub identity_gap: f64,
    pub costate_norm: f64,
    pub pass: bool,
    pub failures: Vec<String>,
    pub tolerances: PmpTolerances,
    #[serde(skip)]
    pub adjoint_field: Field,
    #[serde(skip)]
    pub el_field: Field,
    #[serde(skip)]
    pub costate: Field,
}

impl PmpReport {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("report is plain data")
    }
}

/// Multitime maximum-principle certificate for the candidate `(x, u)`.
pub fn pmp_certificate(
    spec: &LagrangianSpec,
    x: &Field,
    u: &Field,
    tol: PmpTolerances,
    check_boundary: bool,
) -> Result<PmpReport> {
    x.same_grid(u)?;
    let grid = x.grid();
    let n = state_dims(x)?;
    let (m, _) = jacobian_dims(u)?;
    let p = costate_from_criticality(spec, x, u)?;
    let costate_norm = p.sup_norm();

    let criticality_residual = criticality_check(spec, x, u, &p)?;

    let functional = DiscreteFunctional::new(spec, grid, n)?;
    let adj = functional.adjoint(x.values())?;
    let el = functional.el(x.values())?;
    let adjoint_field = Field::new(grid, x.rank(), adj)?;
    let el_field = Field::new(grid, x.rank(), el)?;
    let adjoint_residual = adjoint_field.interior_sup_norm();
    let identity_gap = adjoint_field.sub(&el_field)?.interior_sup_norm();
    if identity_gap > 1e-10 * (1.0 + el_field.interior_sup_norm()) {
        return Err(Error::Consistency(format!(
            "adjoint and Euler-Lagrange residuals differ by {identity_gap:e}"
        )));
    }

    let integrability_residual = check_closed_control(u, tol.integrability)?.max_residual;
    let state_residual = jacobian(x)?.sub(u)?.sup_norm();
    let concavity = hamiltonian_concavity_probe(spec, x, u)?.iter().all(|&c| c);
    let boundary_residual = if check_boundary {
        Some(boundary_check(grid, &p, m, n))
    } else {
        None
    };

    let mut failures = Vec::new();
    if criticality_residual > tol.criticality * (1.0 + costate_norm) {
        failures.push("criticality".to_string());
    }
    if adjoint_residual > tol.adjoint {
        failures.push("adjoint".to_string());
    }
    if integrability_residual > tol.integrability {
        failures.push("integrability".to_string());
    }
    if state_residual > tol.state {
        failures.push("state".to_string());
    }
    if tol.require_concavity && !concavity {
        failures.push("concavity".to_string());
    }
    if let Some(b) = boundary_residual {
        if b > tol.boundary {
            failures.push("boundary".to_string());
        }
    }
    Ok(PmpReport {
        criticality_residual,
        adjoint_residual,
        integrability_residual,
        state_residual,
        concavity,
        boundary_residual,
        identity_gap,
        costate_norm,
        pass: failures.is_empty(),
        failures,
        tolerances: tol,
        adjoint_field,
        el_field,
        costate: p,
    })
}

/// Central finite difference of `H = L + p.u` in `u` with `p` frozen.
fn criticality_check(spec: &LagrangianSpec, x: &Field, u: &Field, p: &Field) -> Result<f64> {
    let grid = x.grid();
    let m = grid.dim();
    let k = u.components();
    let h = nodal_domain_metric(spec, grid)?;
    let mut worst: f64 = 0.0;
    let mut uu = vec![0.0; k];
    for node in 0..grid.node_count() {
        let t = grid.coords(node);
        let hn = &h[node * m * m..(node + 1) * m * m];
        let pn = p.at(node);
        uu.copy_from_slice(u.at(node));
        let ham = |uu: &[f64]| -> Result<f64> {
            let l = spec
                .value_at(&t, x.at(node), uu, hn)
                .map_err(|d| Error::DegenerateMetric {
                    node: grid.multi_index(node),
                    det: d.0,
                })?;
            Ok(l + pn.iter().zip(uu).map(|(a, b)| a * b).sum::<f64>())
        };
        for c in 0..k {
            let base = uu[c];
            let eps = 1e-5 * (1.0 + base.abs());
            uu[c] = base + eps;
            let hp = ham(&uu)?;
            uu[c] = base - eps;
            let hm = ham(&uu)?;
            uu[c] = base;
            worst = worst.max(((hp - hm) / (2.0 * eps)).abs());
        }
    }
    Ok(worst)
}

/// `max |sum_a p^a_j n^a|` over boundary nodes and the faces they lie on.
fn boundary_check(grid: &Grid, p: &Field, m: usize, n: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for node in grid.boundary_nodes() {
        let pn = p.at(node);
        for a in 0..m {
            let i = grid.axis_index(node, a);
            if i == 0 || i + 1 == grid.resolution()[a] {
                for j in 0..n {
                    worst = worst.max(pn[a * n + j].abs());
                }
            }
        }
    }
    worst
}

/// Per-node flag: the Hessian of `L` (equivalently of `H`) in `u` is
/// negative semidefinite.
pub fn hamiltonian_concavity_probe(spec: &LagrangianSpec, x: &Field, u: &Field) -> Result<Vec<bool>> {
    x.same_grid(u)?;
    let grid = x.grid();
    let n = state_dims(x)?;
    let (m, _) = jacobian_dims(u)?;
    spec.validate(m, n)?;
    let h = nodal_domain_metric(spec, grid)?;
    let k = m * n;
    let mut hess = vec![0.0; k * k];
    let mut out = Vec::with_capacity(grid.node_count());
    for node in 0..grid.node_count() {
        let t = grid.coords(node);
        spec.d2_du2_at(&t, x.at(node), u.at(node), &h[node * m * m..(node + 1) * m * m], &mut hess)
            .map_err(|d| Error::DegenerateMetric {
                node: grid.multi_index(node),
                det: d.0,
            })?;
        let mut mat = DMatrix::from_row_slice(k, k, &hess);
        // symmetrize rounding noise away
        mat = (&mat + mat.transpose()) * 0.5;
        let eig = SymmetricEigen::new(mat).eigenvalues;
        let scale = eig.iter().fold(0.0f64, |a, e| a.max(e.abs()));
        out.push(eig.iter().all(|&e| e <= 1e-10 * (1.0 + scale)));
    }
    Ok(out)
}
