//! Cost densities, Euler-Lagrange residuals, costates and the
//! maximum-principle certificate.
//!
//! Densities carry the leading minus sign of the maximized functionals:
//! area is `L = -sqrt(det G)` and energy is `L = -1/2 h^{ab} g_ij u^i_a u^j_b`.
//! The control Hamiltonian is `H = L + p^alpha_i u^i_alpha` and the
//! criticality condition gives the costate `p^alpha_i = -dL/du^i_alpha`.
//!
//! Residuals are computed on the P1 (piecewise-linear) interpolant of the
//! state over the Kuhn triangulation of the lattice. The Euler-Lagrange
//! residual at an interior node is the derivative of the discrete functional
//! `sum_T vol_T L(t_T, x_T, u_T)` with respect to that nodal value, divided by
//! the lumped nodal mass. For the energy with `h = I` this is exactly the
//! compact `(2m+1)`-point Laplacian, and the adjoint residual (weak divergence
//! of cellwise costates plus `dH/dx`) equals it node for node.

mod density;
mod discrete;
mod pmp;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::mtgrid::{Field, Grid, Rank};

pub use density::{AreaForm, CustomLagrangian, LagrangianKind, LagrangianSpec, TargetMetric};
pub use discrete::{
    adjoint_residual, costate_from_criticality, discrete_functional, el_residual, functional_gradient,
    DiscreteFunctional,
};
pub use pmp::{hamiltonian_concavity_probe, pmp_certificate, PmpReport, PmpTolerances};

/// Domain metric `h^{alpha beta}` used by the energy density.
#[derive(Debug, Clone, PartialEq)]
pub enum DomainMetric {
    Identity,
    /// Constant row-major `m x m` matrix.
    Constant(Vec<f64>),
    /// Node-dependent matrix field.
    Field(Field),
}

impl DomainMetric {
    /// Per-node row-major matrices, validated symmetric positive definite.
    pub fn nodal(&self, grid: &Grid) -> Result<Vec<f64>> {
        let m = grid.dim();
        let mm = m * m;
        let values = match self {
            DomainMetric::Identity => {
                let mut id = vec![0.0; mm];
                for a in 0..m {
                    id[a * m + a] = 1.0;
                }
                check_spd(&id, m).map_err(Error::InvalidMetric)?;
                return Ok(id.repeat(grid.node_count()));
            }
            DomainMetric::Constant(h) => {
                if h.len() != mm {
                    return Err(Error::InvalidMetric(format!(
                        "domain metric needs {mm} entries, got {}",
                        h.len()
                    )));
                }
                check_spd(h, m).map_err(Error::InvalidMetric)?;
                return Ok(h.repeat(grid.node_count()));
            }
            DomainMetric::Field(f) => {
                if f.grid() != grid {
                    return Err(Error::GridMismatch);
                }
                if f.rank() != Rank::Matrix(m) {
                    return Err(Error::RankMismatch {
                        expected: Rank::Matrix(m).to_string(),
                        found: f.rank().to_string(),
                    });
                }
                f.values().to_vec()
            }
        };
        for node in 0..grid.node_count() {
            check_spd(&values[node * mm..(node + 1) * mm], m).map_err(|e| {
                Error::InvalidMetric(format!("at node {:?}: {e}", grid.multi_index(node)))
            })?;
        }
        Ok(values)
    }
}

fn check_spd(h: &[f64], m: usize) -> std::result::Result<(), String> {
    for a in 0..m {
        for b in 0..a {
            let (x, y) = (h[a * m + b], h[b * m + a]);
            if (x - y).abs() > 1e-12 * (1.0 + x.abs().max(y.abs())) {
                return Err("domain metric is not symmetric".into());
            }
        }
    }
    DMatrix::from_row_slice(m, m, h)
        .cholesky()
        .map(|_| ())
        .ok_or_else(|| "domain metric is not positive definite".into())
}

impl LagrangianSpec {
    fn with_kind(kind: LagrangianKind) -> Self {
        Self {
            kind,
            target_metric: TargetMetric::Identity,
            domain_metric: DomainMetric::Identity,
            scale: 1.0,
        }
    }

    /// Parametric area of the m-sheet `x(t)`.
    pub fn area() -> Self {
        Self::with_kind(LagrangianKind::Area(AreaForm::Parametric))
    }

    /// Area of the graph `(t, f(t))` of a scalar or vector unknown.
    pub fn graph_area() -> Self {
        Self::with_kind(LagrangianKind::Area(AreaForm::Graph))
    }

    pub fn energy() -> Self {
        Self::with_kind(LagrangianKind::Energy)
    }

    pub fn custom(source: &str, m: usize, n: usize) -> Result<Self> {
        Ok(Self::with_kind(LagrangianKind::Custom(Box::new(CustomLagrangian::parse(
            source, m, n,
        )?))))
    }

    pub fn with_target_metric(mut self, g: TargetMetric) -> Self {
        self.target_metric = g;
        self
    }

    pub fn with_domain_metric(mut self, h: DomainMetric) -> Self {
        self.domain_metric = h;
        self
    }

    pub fn scaled(mut self, lambda: f64) -> Self {
        self.scale *= lambda;
        self
    }

    /// Checks the spec against an `m`-time, `n`-component problem.
    pub fn validate(&self, m: usize, n: usize) -> Result<()> {
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::InvalidOptions(format!(
                "Lagrangian scale must be positive, got {}",
                self.scale
            )));
        }
        if let TargetMetric::Diagonal(d) = &self.target_metric {
            if d.len() != n {
                return Err(Error::InvalidMetric(format!(
                    "target metric has {} entries for {n} components",
                    d.len()
                )));
            }
            if d.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
                return Err(Error::InvalidMetric("target metric entries must be positive".into()));
            }
        }
        if let LagrangianKind::Custom(c) = &self.kind {
            if c.dims() != (m, n) {
                return Err(Error::InvalidOptions(format!(
                    "custom Lagrangian declared for (m, n) = {:?}, used with ({m}, {n})",
                    c.dims()
                )));
            }
        }
        Ok(())
    }
}

/// Induced metric `g_ab = g_ij u^i_a u^j_b` with determinant and inverse.
#[derive(Debug, Clone)]
pub struct InducedMetric {
    pub metric: Field,
    pub det: Field,
    pub inverse: Field,
}

pub fn induced_metric(u: &Field, g: &TargetMetric) -> Result<InducedMetric> {
    induced_metric_with(u, g, AreaForm::Parametric)
}

/// Induced metric of the sheet (`Parametric`) or of its graph (`Graph`,
/// which adds the identity).
pub fn induced_metric_with(u: &Field, g: &TargetMetric, form: AreaForm) -> Result<InducedMetric> {
    let (m, n) = jacobian_dims(u)?;
    let grid = u.grid();
    let gd = target_diagonal(g, n)?;
    let mut metric = Vec::with_capacity(grid.node_count() * m * m);
    let mut det = Vec::with_capacity(grid.node_count());
    let mut inverse = Vec::with_capacity(grid.node_count() * m * m);
    for node in 0..grid.node_count() {
        let un = u.at(node);
        let pm = density::point_metric(un, &gd, m, n, form).map_err(|d| Error::DegenerateMetric {
            node: grid.multi_index(node),
            det: d.0,
        })?;
        for a in 0..m {
            for b in 0..m {
                let mut s: f64 = (0..n).map(|i| gd[i] * un[a * n + i] * un[b * n + i]).sum();
                if form == AreaForm::Graph && a == b {
                    s += 1.0;
                }
                metric.push(s);
            }
        }
        det.push(pm.det);
        for a in 0..m {
            for b in 0..m {
                inverse.push(pm.inv[(a, b)]);
            }
        }
    }
    Ok(InducedMetric {
        metric: Field::new(grid, Rank::Matrix(m), metric)?,
        det: Field::new(grid, Rank::Scalar, det)?,
        inverse: Field::new(grid, Rank::Matrix(m), inverse)?,
    })
}

/// `sqrt(det g_ab)` per node (the positive volume density).
pub fn area_density(metric: &InducedMetric) -> Result<Field> {
    metric.det.map(f64::sqrt)
}

/// `1/2 h^{ab} g_ij u^i_a u^j_b` per node (positive, without the sign of L).
pub fn energy_density(u: &Field, g: &TargetMetric, h: &DomainMetric) -> Result<Field> {
    let (m, n) = jacobian_dims(u)?;
    let grid = u.grid();
    let gd = target_diagonal(g, n)?;
    let hv = h.nodal(grid)?;
    let mut out = Vec::with_capacity(grid.node_count());
    for node in 0..grid.node_count() {
        let un = u.at(node);
        let hn = &hv[node * m * m..(node + 1) * m * m];
        let mut s = 0.0;
        for a in 0..m {
            for b in 0..m {
                for i in 0..n {
                    s += hn[a * m + b] * gd[i] * un[a * n + i] * un[b * n + i];
                }
            }
        }
        out.push(0.5 * s);
    }
    Field::new(grid, Rank::Scalar, out)
}

fn target_diagonal(g: &TargetMetric, n: usize) -> Result<Vec<f64>> {
    let d = g.diagonal(n);
    if d.len() != n || d.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::InvalidMetric(format!(
            "target metric must have {n} positive entries"
        )));
    }
    Ok(d)
}

pub(crate) fn jacobian_dims(u: &Field) -> Result<(usize, usize)> {
    match u.rank() {
        Rank::Jacobian { m, n } => Ok((m, n)),
        other => Err(Error::RankMismatch {
            expected: "jacobian".into(),
            found: other.to_string(),
        }),
    }
}

/// Component count of a state field (scalar counts as one component).
pub(crate) fn state_dims(x: &Field) -> Result<usize> {
    x.rank().vector_len().ok_or_else(|| Error::RankMismatch {
        expected: "scalar or vector".into(),
        found: x.rank().to_string(),
    })
}
