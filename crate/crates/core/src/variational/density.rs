//! Pointwise cost densities and their analytic partials.
//!
//! Every density is evaluated at a point `(t, x, u)` with `u` in the
//! axis-major layout `u[alpha * n + i] = u^i_alpha`, plus the domain metric
//! `h^{alpha beta}` (row-major `m x m`) for the energy kind.

use nalgebra::DMatrix;

use crate::expr::Expr;

/// Target metric `g_ij`: identity or constant positive diagonal.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetMetric {
    Identity,
    Diagonal(Vec<f64>),
}

impl TargetMetric {
    pub fn diagonal(&self, n: usize) -> Vec<f64> {
        match self {
            TargetMetric::Identity => vec![1.0; n],
            TargetMetric::Diagonal(d) => d.clone(),
        }
    }

    /// Multiplies every entry by `s`.
    pub fn scaled(&self, n: usize, s: f64) -> TargetMetric {
        TargetMetric::Diagonal(self.diagonal(n).iter().map(|g| g * s).collect())
    }
}

/// How the area density builds its metric from `u`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AreaForm {
    /// `G = u^T g u`: the m-sheet `x(t)` itself.
    Parametric,
    /// `G = I + u^T g u`: the graph `(t, x(t))` of the unknown.
    Graph,
}

/// Custom density: an expression in `t1..tm`, `x1..xn` and `u{i}_{alpha}`
/// (1-based, `u1_2` is the derivative of component 1 along `t2`), with
/// symbolic first and second partials.
#[derive(Debug, Clone)]
pub struct CustomLagrangian {
    source: String,
    m: usize,
    n: usize,
    expr: Expr,
    dx: Vec<Expr>,
    du: Vec<Expr>,
    duu: Vec<Expr>,
}

impl CustomLagrangian {
    pub fn variable_names(m: usize, n: usize) -> Vec<String> {
        let mut names: Vec<String> = (1..=m).map(|a| format!("t{a}")).collect();
        names.extend((1..=n).map(|i| format!("x{i}")));
        for a in 1..=m {
            for i in 1..=n {
                names.push(format!("u{i}_{a}"));
            }
        }
        names
    }

    pub fn parse(source: &str, m: usize, n: usize) -> crate::Result<Self> {
        let names = Self::variable_names(m, n);
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let expr = Expr::parse(source, &refs)?;
        let dx = (0..n).map(|i| expr.derivative(m + i)).collect();
        let du: Vec<Expr> = (0..m * n).map(|k| expr.derivative(m + n + k)).collect();
        let duu = du
            .iter()
            .flat_map(|d| (0..m * n).map(move |k| d.derivative(m + n + k)))
            .collect();
        Ok(Self {
            source: source.to_string(),
            m,
            n,
            expr,
            dx,
            du,
            duu,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.m, self.n)
    }

    fn vars(&self, t: &[f64], x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.m + self.n + self.m * self.n);
        v.extend_from_slice(t);
        v.extend_from_slice(x);
        v.extend_from_slice(u);
        v
    }
}

/// Cost density family.
#[derive(Debug, Clone)]
pub enum LagrangianKind {
    /// `L = -sqrt(det G)`.
    Area(AreaForm),
    /// `L = -1/2 h^{ab} g_ij u^i_a u^j_b`.
    Energy,
    Custom(Box<CustomLagrangian>),
}

/// A cost density `L(t, x, u)` together with its metrics and a positive
/// scale factor multiplying the whole density.
#[derive(Debug, Clone)]
pub struct LagrangianSpec {
    pub kind: LagrangianKind,
    pub target_metric: TargetMetric,
    pub domain_metric: super::DomainMetric,
    pub scale: f64,
}

/// Induced metric at one point: `G`, `G^{-1}` and `det G`.
pub(crate) struct PointMetric {
    pub inv: DMatrix<f64>,
    pub det: f64,
}

/// Failure inside a pointwise evaluation: the induced metric is singular.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Degenerate(pub f64);

pub(crate) fn point_metric(u: &[f64], g: &[f64], m: usize, n: usize, form: AreaForm) -> Result<PointMetric, Degenerate> {
    let mut mat = DMatrix::<f64>::zeros(m, m);
    for a in 0..m {
        for b in a..m {
            let mut s = 0.0;
            for i in 0..n {
                s += g[i] * u[a * n + i] * u[b * n + i];
            }
            if form == AreaForm::Graph && a == b {
                s += 1.0;
            }
            mat[(a, b)] = s;
            mat[(b, a)] = s;
        }
    }
    let det = mat.determinant();
    let trace: f64 = (0..m).map(|a| mat[(a, a)]).sum();
    // graph metrics dominate the identity; sheet metrics need a scale-aware floor
    let floor = match form {
        AreaForm::Graph => 0.0,
        AreaForm::Parametric => 1e-13 * (trace / m as f64).max(1.0).powi(m as i32),
    };
    if !(det > floor) {
        return Err(Degenerate(det));
    }
    let inv = mat.try_inverse().ok_or(Degenerate(det))?;
    Ok(PointMetric { inv, det })
}

impl LagrangianSpec {
    /// Density value.
    pub(crate) fn value_at(&self, t: &[f64], x: &[f64], u: &[f64], h: &[f64]) -> Result<f64, Degenerate> {
        let m = t.len();
        let n = x.len();
        let g = self.target_metric.diagonal(n);
        let v = match &self.kind {
            LagrangianKind::Area(form) => -point_metric(u, &g, m, n, *form)?.det.sqrt(),
            LagrangianKind::Energy => {
                let mut s = 0.0;
                for a in 0..m {
                    for b in 0..m {
                        let hab = h[a * m + b];
                        if hab == 0.0 {
                            continue;
                        }
                        for i in 0..n {
                            s += hab * g[i] * u[a * n + i] * u[b * n + i];
                        }
                    }
                }
                -0.5 * s
            }
            LagrangianKind::Custom(c) => c.expr.eval(&c.vars(t, x, u)),
        };
        Ok(self.scale * v)
    }

    /// `dL/dx^i`; zero for the area and energy kinds (constant metrics).
    pub(crate) fn d_dx_at(&self, t: &[f64], x: &[f64], u: &[f64], out: &mut [f64]) {
        match &self.kind {
            LagrangianKind::Custom(c) => {
                let vars = c.vars(t, x, u);
                for (o, d) in out.iter_mut().zip(&c.dx) {
                    *o = self.scale * d.eval(&vars);
                }
            }
            _ => out.fill(0.0),
        }
    }

    /// `dL/du^i_alpha` by the chain rule through the induced metric:
    /// `dL/dG_{bc}` contracted with `dG_{bc}/du^i_a`.
    pub(crate) fn d_du_at(&self, t: &[f64], x: &[f64], u: &[f64], h: &[f64], out: &mut [f64]) -> Result<(), Degenerate> {
        let m = t.len();
        let n = x.len();
        let g = self.target_metric.diagonal(n);
        // dL/dG as an m x m matrix, then out_{a,i} = 2 sum_c dL/dG_{ac} (g u)_{i c}
        let dl_dg: DMatrix<f64> = match &self.kind {
            LagrangianKind::Area(form) => {
                let pm = point_metric(u, &g, m, n, *form)?;
                pm.inv * (-0.5 * self.scale * pm.det.sqrt())
            }
            LagrangianKind::Energy => DMatrix::from_row_slice(m, m, h) * (-0.5 * self.scale),
            LagrangianKind::Custom(c) => {
                let vars = c.vars(t, x, u);
                for (o, d) in out.iter_mut().zip(&c.du) {
                    *o = self.scale * d.eval(&vars);
                }
                return Ok(());
            }
        };
        for a in 0..m {
            for i in 0..n {
                let mut s = 0.0;
                for c in 0..m {
                    s += (dl_dg[(a, c)] + dl_dg[(c, a)]) * g[i] * u[c * n + i];
                }
                out[a * n + i] = s;
            }
        }
        Ok(())
    }

    /// Costate `p^alpha_i = -dL/du^i_alpha` from the closed forms
    /// `sqrt(det G) G^{ab} g_ij u^j_b` (area) and `h^{ab} g_ij u^j_b` (energy).
    pub(crate) fn costate_at(&self, t: &[f64], x: &[f64], u: &[f64], h: &[f64], out: &mut [f64]) -> Result<(), Degenerate> {
        let m = t.len();
        let n = x.len();
        let g = self.target_metric.diagonal(n);
        match &self.kind {
            LagrangianKind::Area(form) => {
                let pm = point_metric(u, &g, m, n, *form)?;
                let a_root = pm.det.sqrt();
                for a in 0..m {
                    for i in 0..n {
                        let k: f64 = (0..m).map(|b| pm.inv[(a, b)] * u[b * n + i]).sum();
                        out[a * n + i] = self.scale * a_root * g[i] * k;
                    }
                }
            }
            LagrangianKind::Energy => {
                for a in 0..m {
                    for i in 0..n {
                        let k: f64 = (0..m).map(|b| h[a * m + b] * u[b * n + i]).sum();
                        out[a * n + i] = self.scale * g[i] * k;
                    }
                }
            }
            LagrangianKind::Custom(c) => {
                let vars = c.vars(t, x, u);
                for (o, d) in out.iter_mut().zip(&c.du) {
                    *o = -self.scale * d.eval(&vars);
                }
            }
        }
        Ok(())
    }

    /// Hessian `d^2 L / du du`, row-major over the flattened index
    /// `alpha * n + i`.
    pub(crate) fn d2_du2_at(&self, t: &[f64], x: &[f64], u: &[f64], h: &[f64], out: &mut [f64]) -> Result<(), Degenerate> {
        let m = t.len();
        let n = x.len();
        let mn = m * n;
        let g = self.target_metric.diagonal(n);
        match &self.kind {
            LagrangianKind::Area(form) => {
                let pm = point_metric(u, &g, m, n, *form)?;
                let root = pm.det.sqrt();
                // K = g U G^{-1} (n x m), P = K U^T g (n x n)
                let mut k = DMatrix::<f64>::zeros(n, m);
                for i in 0..n {
                    for a in 0..m {
                        k[(i, a)] = g[i] * (0..m).map(|b| u[b * n + i] * pm.inv[(b, a)]).sum::<f64>();
                    }
                }
                let mut p = DMatrix::<f64>::zeros(n, n);
                for i in 0..n {
                    for j in 0..n {
                        p[(i, j)] = (0..m).map(|c| k[(i, c)] * u[c * n + j]).sum::<f64>() * g[j];
                    }
                }
                for a in 0..m {
                    for i in 0..n {
                        for b in 0..m {
                            for j in 0..n {
                                let gij = if i == j { g[i] } else { 0.0 };
                                let hess = root
                                    * (k[(i, a)] * k[(j, b)] - k[(i, b)] * k[(j, a)]
                                        + (gij - p[(i, j)]) * pm.inv[(a, b)]);
                                out[(a * n + i) * mn + b * n + j] = -self.scale * hess;
                            }
                        }
                    }
                }
            }
            LagrangianKind::Energy => {
                out.fill(0.0);
                for a in 0..m {
                    for b in 0..m {
                        for i in 0..n {
                            out[(a * n + i) * mn + b * n + i] = -self.scale * h[a * m + b] * g[i];
                        }
                    }
                }
            }
            LagrangianKind::Custom(c) => {
                let vars = c.vars(t, x, u);
                for (o, d) in out.iter_mut().zip(&c.duu) {
                    *o = self.scale * d.eval(&vars);
                }
            }
        }
        Ok(())
    }
}
