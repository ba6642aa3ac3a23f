use crate::error::{Error, Result};
use crate::mtgrid::{Field, Grid, KuhnComplex, Rank, Simplex};
use crate::variational::density::Degenerate;
use crate::variational::{jacobian_dims, state_dims, LagrangianKind, LagrangianSpec};

/// The functional `I_h(x) = sum_T vol_T L(t_T, x_T, u_T)` over the Kuhn
/// triangulation, where `u_T` is the Jacobian of the P1 interpolant of `x` on
/// simplex `T` and `t_T`, `x_T` are vertex averages.
#[derive(Debug, Clone)]
pub struct DiscreteFunctional {
    spec: LagrangianSpec,
    complex: KuhnComplex,
    n: usize,
    centroids: Vec<f64>,
    h_simplex: Vec<f64>,
}

/// Scratch buffers for one simplex evaluation.
struct Scratch {
    u: Vec<f64>,
    xbar: Vec<f64>,
    du: Vec<f64>,
    dx: Vec<f64>,
    grad_phi: Vec<f64>,
}

impl DiscreteFunctional {
    pub fn new(spec: &LagrangianSpec, grid: &Grid, n: usize) -> Result<Self> {
        let m = grid.dim();
        spec.validate(m, n)?;
        let complex = KuhnComplex::new(grid);
        let mm = m * m;
        let h_nodal = if matches!(spec.kind, LagrangianKind::Energy) {
            Some(spec.domain_metric.nodal(grid)?)
        } else {
            None
        };
        let count = complex.simplices().len();
        let mut centroids = vec![0.0; count * m];
        let mut h_simplex = vec![0.0; count * mm];
        for (k, s) in complex.simplices().iter().enumerate() {
            complex.centroid(s, &mut centroids[k * m..(k + 1) * m]);
            if let Some(h) = &h_nodal {
                complex.average(s, h, mm, &mut h_simplex[k * mm..(k + 1) * mm]);
            }
        }
        Ok(Self {
            spec: spec.clone(),
            complex,
            n,
            centroids,
            h_simplex,
        })
    }

    pub fn grid(&self) -> &Grid {
        self.complex.grid()
    }

    pub fn spec(&self) -> &LagrangianSpec {
        &self.spec
    }

    pub fn components(&self) -> usize {
        self.n
    }

    pub fn lumped_mass(&self) -> &[f64] {
        self.complex.lumped_mass()
    }

    fn scratch(&self) -> Scratch {
        let m = self.grid().dim();
        Scratch {
            u: vec![0.0; m * self.n],
            xbar: vec![0.0; self.n],
            du: vec![0.0; m * self.n],
            dx: vec![0.0; self.n],
            grad_phi: vec![0.0; m],
        }
    }

    fn check_len(&self, x: &[f64]) -> Result<()> {
        let expected = self.grid().node_count() * self.n;
        if x.len() != expected {
            return Err(Error::ShapeMismatch {
                expected,
                found: x.len(),
            });
        }
        Ok(())
    }

    fn degenerate(&self, s: &Simplex, d: Degenerate) -> Error {
        Error::DegenerateMetric {
            node: self.grid().multi_index(s.vertices[0]),
            det: d.0,
        }
    }

    fn local(&self, k: usize) -> (&[f64], &[f64]) {
        let m = self.grid().dim();
        (
            &self.centroids[k * m..(k + 1) * m],
            &self.h_simplex[k * m * m..(k + 1) * m * m],
        )
    }

    /// Value of the discrete functional for nodal values `x` (node-major).
    pub fn value(&self, x: &[f64]) -> Result<f64> {
        self.check_len(x)?;
        let mut sc = self.scratch();
        let mut total = 0.0;
        for (k, s) in self.complex.simplices().iter().enumerate() {
            let (t, h) = self.local(k);
            self.complex.simplex_jacobian(s, x, self.n, &mut sc.u);
            self.complex.average(s, x, self.n, &mut sc.xbar);
            total += self
                .spec
                .value_at(t, &sc.xbar, &sc.u, h)
                .map_err(|d| self.degenerate(s, d))?;
        }
        Ok(total * self.complex.simplex_volume())
    }

    /// `dI_h / dx` at every node (boundary nodes included).
    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x)?;
        let m = self.grid().dim();
        let n = self.n;
        let vol = self.complex.simplex_volume();
        let has_dx = matches!(self.spec.kind, LagrangianKind::Custom(_));
        let mut sc = self.scratch();
        let mut grad = vec![0.0; x.len()];
        for (k, s) in self.complex.simplices().iter().enumerate() {
            let (t, h) = self.local(k);
            self.complex.simplex_jacobian(s, x, n, &mut sc.u);
            self.complex.average(s, x, n, &mut sc.xbar);
            self.spec
                .d_du_at(t, &sc.xbar, &sc.u, h, &mut sc.du)
                .map_err(|d| self.degenerate(s, d))?;
            if has_dx {
                self.spec.d_dx_at(t, &sc.xbar, &sc.u, &mut sc.dx);
            }
            for (j, &v) in s.vertices.iter().enumerate() {
                self.complex.basis_gradient(s, j, &mut sc.grad_phi);
                for i in 0..n {
                    let mut acc = if has_dx { sc.dx[i] / (m + 1) as f64 } else { 0.0 };
                    for a in 0..m {
                        acc += sc.du[a * n + i] * sc.grad_phi[a];
                    }
                    grad[v * n + i] += vol * acc;
                }
            }
        }
        Ok(grad)
    }

    /// Euler-Lagrange residual: gradient over lumped mass at interior nodes,
    /// zero on the boundary.
    pub fn el(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut g = self.gradient(x)?;
        self.normalize(&mut g);
        Ok(g)
    }

    /// Cellwise costates `p_T = -dL/du (u_T)` from the closed-form formulas,
    /// laid out simplex-major in the jacobian layout.
    pub fn cell_costates(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x)?;
        let mn = self.grid().dim() * self.n;
        let mut sc = self.scratch();
        let mut out = vec![0.0; self.complex.simplices().len() * mn];
        for (k, s) in self.complex.simplices().iter().enumerate() {
            let (t, h) = self.local(k);
            self.complex.simplex_jacobian(s, x, self.n, &mut sc.u);
            self.complex.average(s, x, self.n, &mut sc.xbar);
            self.spec
                .costate_at(t, &sc.xbar, &sc.u, h, &mut out[k * mn..(k + 1) * mn])
                .map_err(|d| self.degenerate(s, d))?;
        }
        Ok(out)
    }

    /// Adjoint residual `div p + dH/dx` with the divergence taken in weak
    /// form against the hat functions and `dH/dx = dL/dx` lumped.
    pub fn adjoint(&self, x: &[f64]) -> Result<Vec<f64>> {
        let p = self.cell_costates(x)?;
        let m = self.grid().dim();
        let n = self.n;
        let mn = m * n;
        let vol = self.complex.simplex_volume();
        let has_dx = matches!(self.spec.kind, LagrangianKind::Custom(_));
        let mut sc = self.scratch();
        let mut out = vec![0.0; x.len()];
        for (k, s) in self.complex.simplices().iter().enumerate() {
            let pk = &p[k * mn..(k + 1) * mn];
            if has_dx {
                let (t, _) = self.local(k);
                self.complex.simplex_jacobian(s, x, n, &mut sc.u);
                self.complex.average(s, x, n, &mut sc.xbar);
                self.spec.d_dx_at(t, &sc.xbar, &sc.u, &mut sc.dx);
            }
            for (j, &v) in s.vertices.iter().enumerate() {
                self.complex.basis_gradient(s, j, &mut sc.grad_phi);
                for i in 0..n {
                    let mut flux = 0.0;
                    for a in 0..m {
                        flux += pk[a * n + i] * sc.grad_phi[a];
                    }
                    let source = if has_dx { sc.dx[i] / (m + 1) as f64 } else { 0.0 };
                    out[v * n + i] += vol * (source - flux);
                }
            }
        }
        self.normalize(&mut out);
        Ok(out)
    }

    fn normalize(&self, g: &mut [f64]) {
        let grid = self.grid();
        let n = self.n;
        let mass = self.complex.lumped_mass();
        for node in 0..grid.node_count() {
            let w = if grid.is_boundary(node) { 0.0 } else { 1.0 / mass[node] };
            for v in &mut g[node * n..(node + 1) * n] {
                *v *= w;
            }
        }
    }
}

pub fn discrete_functional(spec: &LagrangianSpec, x: &Field) -> Result<f64> {
    let n = state_dims(x)?;
    DiscreteFunctional::new(spec, x.grid(), n)?.value(x.values())
}

/// Gradient of the discrete functional with respect to the nodal values.
pub fn functional_gradient(spec: &LagrangianSpec, x: &Field) -> Result<Field> {
    let n = state_dims(x)?;
    let g = DiscreteFunctional::new(spec, x.grid(), n)?.gradient(x.values())?;
    Field::new(x.grid(), x.rank(), g)
}

/// Euler-Lagrange residual `dL/dx - D_a(dL/du_a)` per interior node; boundary
/// nodes hold zero.
pub fn el_residual(spec: &LagrangianSpec, x: &Field) -> Result<Field> {
    let n = state_dims(x)?;
    let r = DiscreteFunctional::new(spec, x.grid(), n)?.el(x.values())?;
    Field::new(x.grid(), x.rank(), r)
}

/// Adjoint residual `D_a p^a + dH/dx` built from the costates of the
/// interpolated state; boundary nodes hold zero.
pub fn adjoint_residual(spec: &LagrangianSpec, x: &Field) -> Result<Field> {
    let n = state_dims(x)?;
    let r = DiscreteFunctional::new(spec, x.grid(), n)?.adjoint(x.values())?;
    Field::new(x.grid(), x.rank(), r)
}

/// Nodal costate `p^alpha_i = -dL/du^i_alpha` at `(t, x(t), u(t))`.
pub fn costate_from_criticality(spec: &LagrangianSpec, x: &Field, u: &Field) -> Result<Field> {
    let n = state_dims(x)?;
    let (m, un) = jacobian_dims(u)?;
    x.same_grid(u)?;
    if un != n {
        return Err(Error::RankMismatch {
            expected: Rank::Jacobian { m, n }.to_string(),
            found: u.rank().to_string(),
        });
    }
    let grid = x.grid();
    spec.validate(m, n)?;
    let h = nodal_domain_metric(spec, grid)?;
    let mut out = vec![0.0; grid.node_count() * m * n];
    for node in 0..grid.node_count() {
        let t = grid.coords(node);
        spec.costate_at(
            &t,
            x.at(node),
            u.at(node),
            &h[node * m * m..(node + 1) * m * m],
            &mut out[node * m * n..(node + 1) * m * n],
        )
        .map_err(|d| Error::DegenerateMetric {
            node: grid.multi_index(node),
            det: d.0,
        })?;
    }
    Field::new(grid, Rank::Jacobian { m, n }, out)
}

/// Domain metric per node for energy specs; identity matrices otherwise.
pub(crate) fn nodal_domain_metric(spec: &LagrangianSpec, grid: &Grid) -> Result<Vec<f64>> {
    if matches!(spec.kind, LagrangianKind::Energy) {
        spec.domain_metric.nodal(grid)
    } else {
        crate::variational::DomainMetric::Identity.nodal(grid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mtgrid::jacobian;
    use crate::variational::{DomainMetric, TargetMetric};

    fn square(r: usize) -> Grid {
        Grid::new(&[1.0, 1.0], &[r, r]).unwrap()
    }

    #[test]
    fn energy_residual_is_compact_laplacian() {
        let g = Grid::new(&[1.0, 2.0, 1.5], &[5, 6, 4]).unwrap();
        let x = Field::scalar_from_fn(&g, |t| (3.0 * t[0]).sin() * t[1].exp() + t[2] * t[2] * t[0]).unwrap();
        let el = el_residual(&LagrangianSpec::energy(), &x).unwrap();
        let h = g.spacing();
        for node in g.interior_nodes() {
            let mut lap = 0.0;
            for a in 0..3 {
                let s = g.stride(a);
                lap += (x.value(node + s, 0) - 2.0 * x.value(node, 0) + x.value(node - s, 0)) / (h[a] * h[a]);
            }
            assert!((el.value(node, 0) - lap).abs() < 1e-12 * (1.0 + lap.abs()), "{node}");
        }
        for node in g.boundary_nodes() {
            assert_eq!(el.value(node, 0), 0.0);
        }
    }

    #[test]
    fn harmonic_quadratic_has_zero_residual() {
        let g = square(9);
        let x = Field::scalar_from_fn(&g, |t| t[0] * t[0] - t[1] * t[1]).unwrap();
        assert!(el_residual(&LagrangianSpec::energy(), &x).unwrap().sup_norm() < 1e-10);
    }

    #[test]
    fn planes_are_minimal_graphs() {
        let g = square(7);
        let x = Field::scalar_from_fn(&g, |t| 0.3 + 1.2 * t[0] - 0.7 * t[1]).unwrap();
        assert!(el_residual(&LagrangianSpec::graph_area(), &x).unwrap().sup_norm() < 1e-10);
    }

    #[test]
    fn adjoint_matches_el_for_each_kind() {
        let g = Grid::new(&[1.0, 1.0], &[8, 7]).unwrap();
        let xs = Field::scalar_from_fn(&g, |t| (t[0] * 2.0).sin() + t[0] * t[1]).unwrap();
        let xv = Field::from_fn(&g, Rank::Vector(3), |t, o| {
            o[0] = t[0] + 0.1 * t[1] * t[1];
            o[1] = t[1] - 0.2 * t[0] * t[1];
            o[2] = (t[0] + t[1]).sin();
        })
        .unwrap();
        let hfield = Field::from_fn(&g, Rank::Matrix(2), |t, o| {
            o.copy_from_slice(&[2.0 + t[0], 0.3, 0.3, 1.0 + t[1]]);
        })
        .unwrap();
        let cases: Vec<(LagrangianSpec, &Field)> = vec![
            (LagrangianSpec::energy(), &xs),
            (
                LagrangianSpec::energy()
                    .with_domain_metric(DomainMetric::Field(hfield))
                    .with_target_metric(TargetMetric::Diagonal(vec![1.0, 2.0, 0.5])),
                &xv,
            ),
            (LagrangianSpec::graph_area().scaled(3.0), &xs),
            (LagrangianSpec::area(), &xv),
            (LagrangianSpec::custom("x1^2 * t1 - u1_1^2 + sin(u1_2)", 2, 1).unwrap(), &xs),
        ];
        for (spec, x) in cases {
            let el = el_residual(&spec, x).unwrap();
            let adj = adjoint_residual(&spec, x).unwrap();
            let gap = el.sub(&adj).unwrap().sup_norm();
            assert!(gap < 1e-10, "{:?}: gap {gap}", spec.kind);
            assert!(el.sup_norm() > 1e-3);
        }
    }

    #[test]
    fn gradient_matches_finite_differences_of_functional() {
        let g = Grid::new(&[1.0, 1.0], &[5, 4]).unwrap();
        let x = Field::from_fn(&g, Rank::Vector(2), |t, o| {
            o[0] = t[0] + 0.3 * (t[1] * 3.0).sin();
            o[1] = t[1] + 0.2 * t[0] * t[0];
        })
        .unwrap();
        for spec in [
            LagrangianSpec::area(),
            LagrangianSpec::energy(),
            LagrangianSpec::custom("x1 * x2 * u1_1 - u2_2^2 * t2", 2, 2).unwrap(),
        ] {
            let f = DiscreteFunctional::new(&spec, &g, 2).unwrap();
            let grad = f.gradient(x.values()).unwrap();
            let mut v = x.values().to_vec();
            for k in [0, 7, 13, 22, 39] {
                let eps = 1e-6;
                v[k] += eps;
                let a = f.value(&v).unwrap();
                v[k] -= 2.0 * eps;
                let b = f.value(&v).unwrap();
                v[k] += eps;
                assert!(((a - b) / (2.0 * eps) - grad[k]).abs() < 1e-7, "{:?} {k}", spec.kind);
            }
        }
    }

    #[test]
    fn parabola_graph_residual_tends_to_two() {
        // D_a(f_a / W) = 2 / (1 + 4 t1^2)^{3/2} at t1 = 0 for f = t1^2
        let mut errs = Vec::new();
        for r in [9usize, 17, 33] {
            let g = Grid::with_origin(&[-0.5, -0.5], &[1.0, 1.0], &[r, r]).unwrap();
            let x = Field::scalar_from_fn(&g, |t| t[0] * t[0]).unwrap();
            let el = el_residual(&LagrangianSpec::graph_area(), &x).unwrap();
            let c = g.index(&[(r - 1) / 2, (r - 1) / 2]);
            errs.push((el.value(c, 0) - 2.0).abs());
        }
        assert!(errs[2] < 1e-2);
        assert!(errs[0] / errs[1] > 3.0 && errs[1] / errs[2] > 3.0, "{errs:?}");
    }

    #[test]
    fn costate_examples() {
        let g = square(3);
        let x = Field::from_fn(&g, Rank::Vector(2), |t, o| o.copy_from_slice(t)).unwrap();
        let u = jacobian(&x).unwrap();
        for spec in [LagrangianSpec::energy(), LagrangianSpec::area()] {
            let p = costate_from_criticality(&spec, &x, &u).unwrap();
            for node in 0..g.node_count() {
                let pn = p.at(node);
                assert!((pn[0] - 1.0).abs() < 1e-12 && pn[1].abs() < 1e-12);
                assert!(pn[2].abs() < 1e-12 && (pn[3] - 1.0).abs() < 1e-12);
            }
        }
        let zero = Field::zeros(&g, Rank::Jacobian { m: 2, n: 2 });
        let p = costate_from_criticality(&LagrangianSpec::energy(), &x, &zero).unwrap();
        assert_eq!(p.sup_norm(), 0.0);
    }
}
