//! Controlled linear multitime flows on `z = (xi, y)`, their costates,
//! switching functions and bang-bang synthesis.
//!
//! The flow is `dz/dt^alpha = A_alpha z + B u_alpha` with constant,
//! pairwise commuting `A_alpha` (each `2n x 2n`) and constant `B` (`2n x k`).
//! Controls are jacobian-rank fields with `k` components per axis, laid out
//! `[alpha * k + a] = u^a_alpha`, bounded by `[-1, 1]`. The base metric is
//! flat and diagonal, so the area form carries no connection terms.

use std::io::Write;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::integrability::check_closed_oneform;
use crate::mtgrid::{
    format_float, partial_derivative, path_integral, staircase_path, Field, Grid, LatticePath, PathPattern, Rank, Scheme,
};

/// Constant-coefficient linear flow with box-bounded controls.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFlowSystem {
    n: usize,
    k: usize,
    a: Vec<DMatrix<f64>>,
    b: DMatrix<f64>,
    g: Vec<f64>,
    z0: Vec<f64>,
}

const COMMUTATOR_TOL: f64 = 1e-12;

impl LinearFlowSystem {
    /// `a[alpha]` are the `2n x 2n` coefficient matrices, `b` the `2n x k`
    /// input matrix, `g` the diagonal of the base metric, `z0 = (xi0, y0)`.
    pub fn new(a: Vec<DMatrix<f64>>, b: DMatrix<f64>, g: Vec<f64>, z0: Vec<f64>) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidSystem(msg));
        if a.is_empty() {
            return bad("need at least one coefficient matrix".into());
        }
        let size = a[0].nrows();
        if size == 0 || !size.is_multiple_of(2) {
            return bad(format!("A1 has {size} rows; expected an even positive count 2n"));
        }
        let n = size / 2;
        for (alpha, m) in a.iter().enumerate() {
            if m.nrows() != size || m.ncols() != size {
                return bad(format!("A{} is {}x{}, expected {size}x{size}", alpha + 1, m.nrows(), m.ncols()));
            }
        }
        if b.nrows() != size || b.ncols() == 0 {
            return bad(format!("B is {}x{}, expected {size}xk with k >= 1", b.nrows(), b.ncols()));
        }
        if g.len() != n || g.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return bad(format!("metric diagonal must have {n} positive entries"));
        }
        if z0.len() != size {
            return bad(format!("initial state has {} entries, expected {size}", z0.len()));
        }
        let finite = a.iter().all(|m| m.iter().all(|v| v.is_finite()))
            && b.iter().all(|v| v.is_finite())
            && z0.iter().all(|v| v.is_finite());
        if !finite {
            return bad("non-finite coefficient".into());
        }
        let scale = a.iter().map(|m| m.norm()).fold(0.0, f64::max);
        for alpha in 0..a.len() {
            for beta in alpha + 1..a.len() {
                let norm = (&a[alpha] * &a[beta] - &a[beta] * &a[alpha]).norm();
                if norm > COMMUTATOR_TOL * (1.0 + scale * scale) {
                    return Err(Error::NotCommuting {
                        alpha: alpha + 1,
                        beta: beta + 1,
                        norm,
                    });
                }
            }
        }
        let k = b.ncols();
        Ok(Self { n, k, a, b, g, z0 })
    }

    /// The two-time scalar rotation system: `A1 = A2 = 2 [[0, -1], [1, 0]]`,
    /// `B = (0, 1)^T`, `z0 = (1, 0)`, unit metric.
    pub fn desk_rotation() -> Self {
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, -2.0, 2.0, 0.0]);
        Self::new(vec![rot.clone(), rot], DMatrix::from_column_slice(2, 1, &[0.0, 1.0]), vec![1.0], vec![1.0, 0.0])
            .expect("valid by construction")
    }

    /// State block size `n` (the state has `2n` entries).
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn m(&self) -> usize {
        self.a.len()
    }

    pub fn a(&self, alpha: usize) -> &DMatrix<f64> {
        &self.a[alpha]
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn metric(&self) -> &[f64] {
        &self.g
    }

    pub fn z0(&self) -> &[f64] {
        &self.z0
    }

    /// Same system started from another initial state.
    pub fn with_initial_state(&self, z0: Vec<f64>) -> Result<Self> {
        Self::new(self.a.clone(), self.b.clone(), self.g.clone(), z0)
    }

    fn check_grid(&self, grid: &Grid) -> Result<()> {
        if grid.dim() != self.m() {
            return Err(Error::InvalidSystem(format!(
                "system has {} coefficient matrices but the grid is {}-dimensional",
                self.m(),
                grid.dim()
            )));
        }
        Ok(())
    }

    fn check_control(&self, u: &Field) -> Result<()> {
        self.check_grid(u.grid())?;
        let expected = Rank::Jacobian { m: self.m(), n: self.k };
        if u.rank() != expected {
            return Err(Error::RankMismatch {
                expected: expected.to_string(),
                found: u.rank().to_string(),
            });
        }
        Ok(())
    }
}

/// Heun staircase integration. Axes are swept in `order`; forward sweeps
/// start at node 0 and step `+h`, backward sweeps start at the far corner
/// and step `-h`. `rhs(node, axis, z, out)` is the right-hand side along
/// `axis`.
fn staircase_fill<F>(grid: &Grid, order: &[usize], backward: bool, start: &[f64], rhs: F) -> Vec<f64>
where
    F: Fn(usize, usize, &[f64], &mut [f64]),
{
    let w = start.len();
    let count = grid.node_count();
    let res = grid.resolution();
    let mut z = vec![0.0; count * w];
    let first = if backward { count - 1 } else { 0 };
    z[first * w..(first + 1) * w].copy_from_slice(start);
    let (mut k1, mut k2, mut pred) = (vec![0.0; w], vec![0.0; w], vec![0.0; w]);
    let anchor = |axis: usize| if backward { res[axis] - 1 } else { 0 };
    for (s, &axis) in order.iter().enumerate() {
        let stride = grid.stride(axis);
        let h = if backward { -grid.spacing()[axis] } else { grid.spacing()[axis] };
        let visit: Box<dyn Iterator<Item = usize>> = if backward {
            Box::new((0..count).rev())
        } else {
            Box::new(0..count)
        };
        for node in visit {
            let idx = grid.multi_index(node);
            if idx[axis] == anchor(axis) || order[s + 1..].iter().any(|&b| idx[b] != anchor(b)) {
                continue;
            }
            let from = if backward { node + stride } else { node - stride };
            let (zp, zq) = if backward {
                let (lo, hi) = z.split_at_mut(from * w);
                (&hi[..w], &mut lo[node * w..(node + 1) * w])
            } else {
                let (lo, hi) = z.split_at_mut(node * w);
                (&lo[from * w..(from + 1) * w], &mut hi[..w])
            };
            rhs(from, axis, zp, &mut k1);
            for i in 0..w {
                pred[i] = zp[i] + h * k1[i];
            }
            rhs(node, axis, &pred, &mut k2);
            for i in 0..w {
                zq[i] = zp[i] + 0.5 * h * (k1[i] + k2[i]);
            }
        }
    }
    z
}

fn mat_vec(a: &DMatrix<f64>, z: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = (0..z.len()).map(|j| a[(i, j)] * z[j]).sum();
    }
}

/// Integrated state with its consistency diagnostics.
#[derive(Debug, Clone)]
pub struct FlowResult {
    /// `(xi, y)` stacked, `2n` components per node.
    pub z: Field,
    /// Sup gap between the axis-order-forward and axis-order-reversed
    /// staircase integrations.
    pub path_residual: f64,
    /// Sup of the mixed-derivative mismatch of the right-hand sides.
    pub integrability_residual: f64,
    /// `integrability_residual <= tol`.
    pub integrable: bool,
}

impl FlowResult {
    pub fn xi(&self) -> Field {
        split_block(&self.z, 0)
    }

    pub fn y(&self) -> Field {
        split_block(&self.z, 1)
    }
}

fn split_block(z: &Field, block: usize) -> Field {
    let w = z.components();
    let n = w / 2;
    let values: Vec<f64> = z.values().chunks(w).flat_map(|c| c[block * n..(block + 1) * n].to_vec()).collect();
    Field::new(z.grid(), Rank::Vector(n), values).expect("sub-block of a valid field")
}

/// Integrates the controlled flow from `z(0) = z0`.
///
/// A control violating the integrability condition does not raise; it is
/// reported through `integrable = false` (threshold `tol`).
pub fn integrate_flow(sys: &LinearFlowSystem, u: &Field, tol: f64) -> Result<FlowResult> {
    sys.check_control(u)?;
    let grid = u.grid();
    let m = sys.m();
    let k = sys.k;
    let w = 2 * sys.n;
    let uv = u.values();
    let mut bu = vec![0.0; w];
    let rhs = |node: usize, axis: usize, z: &[f64], out: &mut [f64]| {
        mat_vec(&sys.a[axis], z, out);
        let ua = &uv[node * m * k + axis * k..node * m * k + (axis + 1) * k];
        for i in 0..w {
            out[i] += (0..k).map(|a| sys.b[(i, a)] * ua[a]).sum::<f64>();
        }
    };
    let forward: Vec<usize> = (0..m).collect();
    let reversed: Vec<usize> = (0..m).rev().collect();
    let z = staircase_fill(grid, &forward, false, &sys.z0, rhs);
    let path_residual = if m > 1 {
        let z2 = staircase_fill(grid, &reversed, false, &sys.z0, rhs);
        z.iter().zip(&z2).fold(0.0f64, |acc, (p, q)| acc.max((p - q).abs()))
    } else {
        0.0
    };
    let z = Field::new(grid, Rank::Vector(w), z)?;

    // mixed derivatives of X_alpha = A_alpha z + B u_alpha, per state component
    let mut integrability_residual: f64 = 0.0;
    if m > 1 {
        let mut x = vec![vec![0.0; grid.node_count() * w]; m];
        for (axis, xa) in x.iter_mut().enumerate() {
            for node in 0..grid.node_count() {
                rhs(node, axis, z.at(node), &mut bu);
                xa[node * w..(node + 1) * w].copy_from_slice(&bu);
            }
        }
        for c in 0..w {
            let form: Vec<Field> = x
                .iter()
                .map(|xa| Field::new(grid, Rank::Scalar, xa.iter().skip(c).step_by(w).copied().collect()))
                .collect::<Result<_>>()?;
            integrability_residual = integrability_residual.max(check_closed_oneform(&form, tol)?.max_residual);
        }
    }
    Ok(FlowResult {
        z,
        path_residual,
        integrability_residual,
        integrable: integrability_residual <= tol,
    })
}

/// Costate `(p, q)` with its path diagnostic.
#[derive(Debug, Clone)]
pub struct CostateResult {
    pub pq: Field,
    /// Sup gap between the two backward staircase orders.
    pub path_residual: f64,
}

/// `dL_alpha/dz` for the area 1-form frozen along `z_ref`:
/// `1/2 (g d_alpha y, -g d_alpha xi)`, with central differences.
pub fn frozen_area_forcing(sys: &LinearFlowSystem, z_ref: &Field) -> Result<Vec<Field>> {
    sys.check_grid(z_ref.grid())?;
    let w = 2 * sys.n;
    if z_ref.rank() != Rank::Vector(w) {
        return Err(Error::RankMismatch {
            expected: Rank::Vector(w).to_string(),
            found: z_ref.rank().to_string(),
        });
    }
    let n = sys.n;
    (0..sys.m())
        .map(|alpha| {
            let d = partial_derivative(z_ref, alpha, Scheme::Central)?;
            let values: Vec<f64> = d
                .values()
                .chunks(w)
                .flat_map(|dz| {
                    let mut f = vec![0.0; w];
                    for i in 0..n {
                        f[i] = 0.5 * sys.g[i] * dz[n + i];
                        f[n + i] = -0.5 * sys.g[i] * dz[i];
                    }
                    f
                })
                .collect();
            Field::new(z_ref.grid(), Rank::Vector(w), values)
        })
        .collect()
}

/// Integrates `d(p,q)/dt^alpha = -(F_alpha + A_alpha^T (p,q))` backward from
/// the far corner, where `(p,q) = 0` unless `terminal` overrides it. An
/// empty `forcing` means `F = 0`.
pub fn integrate_costate(
    sys: &LinearFlowSystem,
    grid: &Grid,
    forcing: &[Field],
    terminal: Option<&[f64]>,
) -> Result<CostateResult> {
    sys.check_grid(grid)?;
    let m = sys.m();
    let w = 2 * sys.n;
    if !forcing.is_empty() {
        if forcing.len() != m {
            return Err(Error::ShapeMismatch {
                expected: m,
                found: forcing.len(),
            });
        }
        for f in forcing {
            if f.grid() != grid {
                return Err(Error::GridMismatch);
            }
            if f.rank() != Rank::Vector(w) {
                return Err(Error::RankMismatch {
                    expected: Rank::Vector(w).to_string(),
                    found: f.rank().to_string(),
                });
            }
        }
    }
    let start = match terminal {
        Some(t) if t.len() != w => {
            return Err(Error::ShapeMismatch {
                expected: w,
                found: t.len(),
            })
        }
        Some(t) => t.to_vec(),
        None => vec![0.0; w],
    };
    let at: Vec<DMatrix<f64>> = sys.a.iter().map(|a| a.transpose()).collect();
    let rhs = |node: usize, axis: usize, p: &[f64], out: &mut [f64]| {
        mat_vec(&at[axis], p, out);
        if let Some(f) = forcing.get(axis) {
            for (o, fv) in out.iter_mut().zip(f.at(node)) {
                *o += fv;
            }
        }
        for o in out.iter_mut() {
            *o = -*o;
        }
    };
    let forward: Vec<usize> = (0..m).collect();
    let reversed: Vec<usize> = (0..m).rev().collect();
    let pq = staircase_fill(grid, &forward, true, &start, rhs);
    let path_residual = if m > 1 {
        let other = staircase_fill(grid, &reversed, true, &start, rhs);
        pq.iter().zip(&other).fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()))
    } else {
        0.0
    };
    Ok(CostateResult {
        pq: Field::new(grid, Rank::Vector(w), pq)?,
        path_residual,
    })
}

/// Switching functions `M_a = p_i B^i_a + q_i B^{n+i}_a` and their signs.
#[derive(Debug, Clone)]
pub struct SwitchReport {
    /// One scalar field per control component.
    pub switching: Vec<Field>,
    /// `[node * k + a]` in `{-1, 0, 1}`.
    pub signs: Vec<i8>,
    /// `[node * k + a]`: `|M_a| <= epsilon`.
    pub singular: Vec<bool>,
    pub epsilon: f64,
}

impl SwitchReport {
    pub fn k(&self) -> usize {
        self.switching.len()
    }

    pub fn grid(&self) -> &Grid {
        self.switching[0].grid()
    }

    pub fn singular_fraction(&self) -> f64 {
        self.singular.iter().filter(|s| **s).count() as f64 / self.singular.len() as f64
    }

    /// CSV with columns `t1..tm, M1..Mk, sign1..signk`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let grid = self.grid();
        let k = self.k();
        let mut header: Vec<String> = (1..=grid.dim()).map(|a| format!("t{a}")).collect();
        header.extend((1..=k).map(|a| format!("M{a}")));
        header.extend((1..=k).map(|a| format!("sign{a}")));
        writeln!(w, "{}", header.join(","))?;
        for node in 0..grid.node_count() {
            let mut row: Vec<String> = grid.coords(node).into_iter().map(format_float).collect();
            row.extend(self.switching.iter().map(|f| format_float(f.value(node, 0))));
            row.extend(self.signs[node * k..(node + 1) * k].iter().map(|s| s.to_string()));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Default singular threshold `1e-9 (1 + sup |M|)`.
pub fn default_epsilon(switching: &[Field]) -> f64 {
    1e-9 * (1.0 + switching.iter().map(Field::sup_norm).fold(0.0, f64::max))
}

pub fn switching_functions(pq: &Field, sys: &LinearFlowSystem, epsilon: Option<f64>) -> Result<SwitchReport> {
    sys.check_grid(pq.grid())?;
    let w = 2 * sys.n;
    if pq.rank() != Rank::Vector(w) {
        return Err(Error::RankMismatch {
            expected: Rank::Vector(w).to_string(),
            found: pq.rank().to_string(),
        });
    }
    let grid = pq.grid();
    let switching: Vec<Field> = (0..sys.k)
        .map(|a| {
            let col = sys.b.column(a);
            let values = pq.values().chunks(w).map(|p| (0..w).map(|i| p[i] * col[i]).sum()).collect();
            Field::new(grid, Rank::Scalar, values)
        })
        .collect::<Result<_>>()?;
    let epsilon = epsilon.unwrap_or_else(|| default_epsilon(&switching));
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidOptions(format!("epsilon {epsilon} must be nonnegative")));
    }
    let k = sys.k;
    let mut signs = vec![0i8; grid.node_count() * k];
    let mut singular = vec![false; grid.node_count() * k];
    for node in 0..grid.node_count() {
        for (a, f) in switching.iter().enumerate() {
            let v = f.value(node, 0);
            if v.abs() <= epsilon {
                singular[node * k + a] = true;
            } else {
                signs[node * k + a] = if v > 0.0 { 1 } else { -1 };
            }
        }
    }
    Ok(SwitchReport {
        switching,
        signs,
        singular,
        epsilon,
    })
}

/// Bang-bang control with its singular mask (`[node * k + a]`).
#[derive(Debug, Clone)]
pub struct BangControl {
    pub u: Field,
    pub singular: Vec<bool>,
}

/// `u^a_alpha = sign(M_a)` on every axis; singular nodes get 0.
pub fn bang_control(report: &SwitchReport) -> BangControl {
    let grid = report.grid();
    let m = grid.dim();
    let k = report.k();
    let mut values = Vec::with_capacity(grid.node_count() * m * k);
    for node in 0..grid.node_count() {
        let signs = &report.signs[node * k..(node + 1) * k];
        for _ in 0..m {
            values.extend(signs.iter().map(|s| f64::from(*s)));
        }
    }
    BangControl {
        u: Field::new(grid, Rank::Jacobian { m, n: k }, values).expect("signs are finite"),
        singular: report.singular.clone(),
    }
}

/// Maximizes the control-dependent part of every `H_alpha` at `node` over
/// a uniform grid of `resolution` points per component of `[-1, 1]^k`.
/// Among equal maxima the candidate closest to 0 wins. Returns the control
/// in the `[alpha * k + a]` layout.
pub fn brute_force_h_max(sys: &LinearFlowSystem, pq: &Field, node: usize, resolution: usize) -> Result<Vec<f64>> {
    if resolution < 3 {
        return Err(Error::InvalidOptions(format!("control grid resolution {resolution} < 3")));
    }
    let w = 2 * sys.n;
    if pq.rank() != Rank::Vector(w) {
        return Err(Error::RankMismatch {
            expected: Rank::Vector(w).to_string(),
            found: pq.rank().to_string(),
        });
    }
    let p = pq.at(node);
    let k = sys.k;
    let level = |j: usize| -1.0 + 2.0 * j as f64 / (resolution - 1) as f64;
    let mut best: Option<(f64, f64, Vec<f64>)> = None;
    let mut digits = vec![0usize; k];
    loop {
        let cand: Vec<f64> = digits.iter().map(|&j| level(j)).collect();
        // H_alpha = L_alpha + p . A_alpha z + (p B) u_alpha: only the last term varies
        let h: f64 = (0..w).map(|i| p[i] * (0..k).map(|a| sys.b[(i, a)] * cand[a]).sum::<f64>()).sum();
        let size: f64 = cand.iter().map(|c| c * c).sum();
        let better = match &best {
            None => true,
            Some((bh, bs, _)) => h > *bh || (h == *bh && size < *bs),
        };
        if better {
            best = Some((h, size, cand));
        }
        let mut pos = 0;
        while pos < k {
            digits[pos] += 1;
            if digits[pos] < resolution {
                break;
            }
            digits[pos] = 0;
            pos += 1;
        }
        if pos == k {
            break;
        }
    }
    let best = best.expect("at least one candidate").2;
    Ok((0..sys.m()).flat_map(|_| best.iter().copied()).collect())
}

/// The area 1-form `1/2 (g_ij xi^i d_alpha y^j - g_ij y^i d_alpha xi^j)` as
/// `m` scalar fields, with central differences.
pub fn area_oneform_pullback(xi: &Field, y: &Field, g: &[f64]) -> Result<Vec<Field>> {
    xi.same_grid(y)?;
    let n = g.len();
    for f in [xi, y] {
        if f.components() != n || matches!(f.rank(), Rank::Jacobian { .. } | Rank::Matrix(_)) {
            return Err(Error::RankMismatch {
                expected: Rank::Vector(n).to_string(),
                found: f.rank().to_string(),
            });
        }
    }
    let grid = xi.grid();
    (0..grid.dim())
        .map(|alpha| {
            let dxi = partial_derivative(xi, alpha, Scheme::Central)?;
            let dy = partial_derivative(y, alpha, Scheme::Central)?;
            let values = (0..grid.node_count())
                .map(|node| {
                    let (x, yv, dx, dyv) = (xi.at(node), y.at(node), dxi.at(node), dy.at(node));
                    0.5 * (0..n).map(|i| g[i] * (x[i] * dyv[i] - yv[i] * dx[i])).sum::<f64>()
                })
                .collect();
            Field::new(grid, Rank::Scalar, values)
        })
        .collect()
}

/// Curvilinear area objective of a state `z` along `path`.
pub fn curvilinear_objective(sys: &LinearFlowSystem, z: &Field, path: &LatticePath) -> Result<f64> {
    let w = 2 * sys.n;
    if z.rank() != Rank::Vector(w) {
        return Err(Error::RankMismatch {
            expected: Rank::Vector(w).to_string(),
            found: z.rank().to_string(),
        });
    }
    let form = area_oneform_pullback(&split_block(z, 0), &split_block(z, 1), &sys.g)?;
    path_integral(&form, path)
}

/// Staircase from the origin to the far corner, axes in natural order.
pub fn corner_path(grid: &Grid) -> Result<LatticePath> {
    staircase_path(grid, &grid.far_corner(), &PathPattern::forward(grid.dim()))
}

/// Output of a synthesis run.
#[derive(Debug, Clone)]
pub struct Synthesis {
    /// Trajectory of the reference control the costate was frozen on.
    pub reference: FlowResult,
    pub costate: CostateResult,
    pub switching: SwitchReport,
    pub control: BangControl,
    /// Trajectory of the synthesized control.
    pub flow: FlowResult,
    /// Curvilinear objective of `flow` along [`corner_path`].
    pub objective: f64,
    /// Reference updates performed (1 for a plain synthesis).
    pub iterations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthesisSummary {
    pub singular_fraction: f64,
    pub objective: f64,
    pub iterations: usize,
    pub flow_path_residual: f64,
    pub costate_path_residual: f64,
    pub integrable: bool,
}

impl Synthesis {
    pub fn summary(&self) -> SynthesisSummary {
        SynthesisSummary {
            singular_fraction: self.switching.singular_fraction(),
            objective: self.objective,
            iterations: self.iterations,
            flow_path_residual: self.flow.path_residual,
            costate_path_residual: self.costate.path_residual,
            integrable: self.flow.integrable,
        }
    }
}

/// Freezes the area form along the trajectory of `reference_u`, integrates
/// the costate with zero terminal data, and applies the bang-bang rule.
pub fn synthesize_bang_bang(
    sys: &LinearFlowSystem,
    reference_u: &Field,
    epsilon: Option<f64>,
    tol: f64,
) -> Result<Synthesis> {
    let reference = integrate_flow(sys, reference_u, tol)?;
    let grid = reference_u.grid();
    let forcing = frozen_area_forcing(sys, &reference.z)?;
    let costate = integrate_costate(sys, grid, &forcing, None)?;
    let switching = switching_functions(&costate.pq, sys, epsilon)?;
    let control = bang_control(&switching);
    let flow = integrate_flow(sys, &control.u, tol)?;
    let objective = curvilinear_objective(sys, &flow.z, &corner_path(grid)?)?;
    Ok(Synthesis {
        reference,
        costate,
        switching,
        control,
        flow,
        objective,
        iterations: 1,
    })
}

/// Re-freezes the area form on the latest synthesized trajectory until the
/// control stops changing or `max_iterations` syntheses have run.
pub fn fixed_point_synthesis(
    sys: &LinearFlowSystem,
    initial_u: &Field,
    epsilon: Option<f64>,
    tol: f64,
    max_iterations: usize,
) -> Result<Synthesis> {
    if max_iterations == 0 {
        return Err(Error::InvalidOptions("max_iterations must be positive".into()));
    }
    let mut current = synthesize_bang_bang(sys, initial_u, epsilon, tol)?;
    for it in 2..=max_iterations {
        let next = synthesize_bang_bang(sys, &current.control.u, epsilon, tol)?;
        let same = next.control.u.values() == current.control.u.values();
        current = Synthesis { iterations: it, ..next };
        if same {
            break;
        }
    }
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DVector;
    use proptest::prelude::*;

    fn scalar_exp(a1: f64, a2: f64) -> LinearFlowSystem {
        let i2 = DMatrix::<f64>::identity(2, 2);
        LinearFlowSystem::new(
            vec![&i2 * a1, &i2 * a2],
            DMatrix::from_column_slice(2, 1, &[1.0, -0.5]),
            vec![1.0],
            vec![1.0, 2.0],
        )
        .unwrap()
    }

    fn square(r: usize) -> Grid {
        Grid::new(&[1.0, 1.0], &[r, r]).unwrap()
    }

    fn control(grid: &Grid, k: usize, f: impl Fn(&[f64], &mut [f64])) -> Field {
        Field::from_fn(grid, Rank::Jacobian { m: grid.dim(), n: k }, f).unwrap()
    }

    #[test]
    fn rejects_non_commuting_matrices() {
        let a1 = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let a2 = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]);
        let r = LinearFlowSystem::new(vec![a1, a2], DMatrix::zeros(2, 1), vec![1.0], vec![0.0, 0.0]);
        // [A1, A2] = diag(1, -1), Frobenius norm sqrt 2
        match r {
            Err(Error::NotCommuting { alpha, beta, norm }) => {
                assert_eq!((alpha, beta), (1, 2));
                assert_relative_eq!(norm, 2f64.sqrt(), max_relative = 1e-14);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        let a = DMatrix::<f64>::zeros(3, 3);
        assert!(LinearFlowSystem::new(vec![a], DMatrix::zeros(3, 1), vec![1.0], vec![0.0; 3]).is_err());
        let a = DMatrix::<f64>::zeros(2, 2);
        assert!(LinearFlowSystem::new(vec![a.clone()], DMatrix::zeros(2, 1), vec![-1.0], vec![0.0; 2]).is_err());
        assert!(LinearFlowSystem::new(vec![a], DMatrix::zeros(2, 1), vec![1.0], vec![0.0; 3]).is_err());
    }

    #[test]
    fn constant_control_grows_linearly() {
        let zero = DMatrix::<f64>::zeros(2, 2);
        let sys = LinearFlowSystem::new(
            vec![zero.clone(), zero],
            DMatrix::identity(2, 2),
            vec![1.0],
            vec![0.5, -1.0],
        )
        .unwrap();
        let g = Grid::new(&[1.0, 2.0], &[5, 7]).unwrap();
        // u^a_alpha = c_{alpha a}
        let c = [0.3, -0.2, 1.0, 0.4];
        let u = control(&g, 2, |_, o| o.copy_from_slice(&c));
        let r = integrate_flow(&sys, &u, 1e-10).unwrap();
        for node in 0..g.node_count() {
            let t = g.coords(node);
            for i in 0..2 {
                let exact = sys.z0()[i] + c[i] * t[0] + c[2 + i] * t[1];
                assert!((r.z.value(node, i) - exact).abs() < 1e-13);
            }
        }
        assert!(r.integrable);
        assert!(r.path_residual < 1e-13);
    }

    #[test]
    fn free_flow_is_exponential() {
        let sys = scalar_exp(0.7, -0.4);
        let g = square(33);
        let u = Field::zeros(&g, Rank::Jacobian { m: 2, n: 1 });
        let r = integrate_flow(&sys, &u, 1e-8).unwrap();
        let mut err: f64 = 0.0;
        for node in 0..g.node_count() {
            let t = g.coords(node);
            let e = (0.7 * t[0] - 0.4 * t[1]).exp();
            for i in 0..2 {
                err = err.max((r.z.value(node, i) - e * sys.z0()[i]).abs());
            }
        }
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn zero_data_stays_zero() {
        let sys = LinearFlowSystem::desk_rotation().with_initial_state(vec![0.0, 0.0]).unwrap();
        let g = square(9);
        let r = integrate_flow(&sys, &Field::zeros(&g, Rank::Jacobian { m: 2, n: 1 }), 1e-8).unwrap();
        assert_eq!(r.z.sup_norm(), 0.0);
    }

    fn exact_exp_system(g: &Grid) -> (LinearFlowSystem, Field, Field) {
        let (a1, a2) = (0.7, -0.4);
        let sys = scalar_exp(a1, a2);
        let psi = |t: &[f64]| t[0].sin() * t[1].cos();
        let u = control(g, 1, |t, o| {
            let e = (a1 * t[0] + a2 * t[1]).exp();
            o[0] = e * t[0].cos() * t[1].cos();
            o[1] = -e * t[0].sin() * t[1].sin();
        });
        let exact = Field::from_fn(g, Rank::Vector(2), |t, o| {
            let e = (a1 * t[0] + a2 * t[1]).exp();
            o[0] = e * (1.0 + psi(t));
            o[1] = e * (2.0 - 0.5 * psi(t));
        })
        .unwrap();
        (sys, u, exact)
    }

    #[test]
    fn staircase_discrepancy_is_second_order() {
        let run = |r: usize| {
            let g = square(r);
            let (sys, u, exact) = exact_exp_system(&g);
            let f = integrate_flow(&sys, &u, 10.0 * g.max_spacing().powi(2)).unwrap();
            assert!(f.integrable, "{}", f.integrability_residual);
            assert!(f.z.sub(&exact).unwrap().sup_norm() < 10.0 * g.max_spacing().powi(2));
            f.path_residual
        };
        let ratio = run(33) / run(65);
        assert!((3.0..5.0).contains(&ratio), "{ratio}");
    }

    #[test]
    fn non_integrable_control_is_flagged() {
        let sys = scalar_exp(0.0, 0.0);
        let g = square(17);
        // u_1 = t2, u_2 = 0: d_2 u_1 = 1 != d_1 u_2 = 0
        let u = control(&g, 1, |t, o| {
            o[0] = t[1];
            o[1] = 0.0;
        });
        let r = integrate_flow(&sys, &u, 1e-6).unwrap();
        assert!(!r.integrable);
        assert!(r.path_residual > 0.1);
    }

    #[test]
    fn wrong_control_rank_is_rejected() {
        let sys = LinearFlowSystem::desk_rotation();
        let g = square(5);
        assert!(matches!(
            integrate_flow(&sys, &Field::zeros(&g, Rank::Vector(2)), 1e-8),
            Err(Error::RankMismatch { .. })
        ));
    }

    #[test]
    fn costate_with_zero_data_vanishes() {
        let zero = DMatrix::<f64>::zeros(2, 2);
        let sys = LinearFlowSystem::new(vec![zero.clone(), zero], DMatrix::zeros(2, 1), vec![1.0], vec![1.0, 1.0]).unwrap();
        let g = square(9);
        let c = integrate_costate(&sys, &g, &[], None).unwrap();
        assert_eq!(c.pq.sup_norm(), 0.0);
        let sys = scalar_exp(0.3, 0.2);
        let c = integrate_costate(&sys, &g, &[], None).unwrap();
        assert_eq!(c.pq.sup_norm(), 0.0);
    }

    #[test]
    fn costate_terminal_override_is_exponential() {
        let sys = scalar_exp(0.3, 0.2);
        let g = square(33);
        let p1 = [1.0, -2.0];
        let c = integrate_costate(&sys, &g, &[], Some(&p1)).unwrap();
        let last = g.node_count() - 1;
        assert_eq!(c.pq.at(last), &p1);
        for node in 0..g.node_count() {
            let t = g.coords(node);
            let e = (0.3 * (1.0 - t[0]) + 0.2 * (1.0 - t[1])).exp();
            for i in 0..2 {
                assert!((c.pq.value(node, i) - e * p1[i]).abs() < 1e-4);
            }
        }
        assert!(c.path_residual < 1e-12);
    }

    #[test]
    fn single_time_costate_matches_reference_integrator() {
        let a = DMatrix::from_row_slice(2, 2, &[0.1, -1.0, 0.5, 0.2]);
        let sys = LinearFlowSystem::new(vec![a.clone()], DMatrix::from_column_slice(2, 1, &[0.0, 1.0]), vec![1.0], vec![1.0, 0.0])
            .unwrap();
        let g = Grid::new(&[2.0], &[201]).unwrap();
        let f = Field::from_fn(&g, Rank::Vector(2), |t, o| {
            o[0] = t[0].sin();
            o[1] = (0.5 * t[0]).cos();
        })
        .unwrap();
        let c = integrate_costate(&sys, &g, std::slice::from_ref(&f), None).unwrap();
        // RK4 on p' = -(f + A^T p) from t = 2 down to 0 with a fine step
        let at = a.transpose();
        let rhs = |t: f64, p: &DVector<f64>| -> DVector<f64> {
            -(DVector::from_vec(vec![t.sin(), (0.5 * t).cos()]) + &at * p)
        };
        let steps = 20_000;
        let h = -2.0 / steps as f64;
        let mut p = DVector::zeros(2);
        let mut t = 2.0;
        let mut oracle = vec![p.clone()];
        for s in 0..steps {
            let k1 = rhs(t, &p);
            let k2 = rhs(t + 0.5 * h, &(&p + &k1 * (0.5 * h)));
            let k3 = rhs(t + 0.5 * h, &(&p + &k2 * (0.5 * h)));
            let k4 = rhs(t + h, &(&p + &k3 * h));
            p += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            t = 2.0 - (s + 1) as f64 * 2.0 / steps as f64;
            oracle.push(p.clone());
        }
        // grid node j sits at t = 0.01 j, i.e. oracle index steps - 100 j
        let mut err: f64 = 0.0;
        for j in 0..201 {
            let o = &oracle[steps - 100 * j];
            for i in 0..2 {
                err = err.max((c.pq.value(j, i) - o[i]).abs());
            }
        }
        assert!(err < 1e-4, "{err}");
        // the staircase and a plain backward Heun loop agree to rounding
        let mut q = DVector::<f64>::zeros(2);
        let hh = -0.01;
        for j in (0..200).rev() {
            let tp = 0.01 * (j + 1) as f64;
            let k1 = rhs(tp, &q);
            let k2 = rhs(tp + hh, &(&q + &k1 * hh));
            q += (k1 + k2) * (0.5 * hh);
            for i in 0..2 {
                assert!((c.pq.value(j, i) - q[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn switching_arithmetic() {
        let sys = LinearFlowSystem::new(
            vec![DMatrix::zeros(2, 2)],
            DMatrix::from_column_slice(2, 1, &[3.0, -1.0]),
            vec![1.0],
            vec![0.0, 0.0],
        )
        .unwrap();
        let g = Grid::new(&[1.0], &[3]).unwrap();
        let pq = Field::constant(&g, Rank::Vector(2), &[2.0, 1.0]).unwrap();
        let r = switching_functions(&pq, &sys, None).unwrap();
        assert_eq!(r.switching[0].value(0, 0), 5.0);
        assert_eq!(r.signs, vec![1, 1, 1]);
        let zero = switching_functions(&Field::zeros(&g, Rank::Vector(2)), &sys, None).unwrap();
        assert!(zero.singular.iter().all(|s| *s));
        assert_eq!(zero.singular_fraction(), 1.0);
    }

    #[test]
    fn zero_input_matrix_is_all_singular() {
        let sys = LinearFlowSystem::new(vec![DMatrix::zeros(2, 2)], DMatrix::zeros(2, 2), vec![1.0], vec![0.0, 0.0]).unwrap();
        let g = Grid::new(&[1.0], &[4]).unwrap();
        let pq = Field::constant(&g, Rank::Vector(2), &[2.0, 1.0]).unwrap();
        let r = switching_functions(&pq, &sys, None).unwrap();
        assert!(r.singular.iter().all(|s| *s));
        let b = bang_control(&r);
        assert_eq!(b.u.sup_norm(), 0.0);
    }

    #[test]
    fn bang_rule_and_brute_force() {
        let sys = LinearFlowSystem::new(
            vec![DMatrix::zeros(2, 2), DMatrix::zeros(2, 2)],
            DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
            vec![1.0],
            vec![0.0, 0.0],
        )
        .unwrap();
        let g = Grid::new(&[1.0, 1.0], &[3, 3]).unwrap();
        for (m_val, expect) in [(5.0, 1.0), (-0.2, -1.0), (-5.0, -1.0), (0.0, 0.0)] {
            let pq = Field::constant(&g, Rank::Vector(2), &[m_val, 7.0]).unwrap();
            let r = switching_functions(&pq, &sys, None).unwrap();
            let b = bang_control(&r);
            assert_eq!(b.u.at(4), &[expect, expect]);
            assert_eq!(b.singular[4], m_val == 0.0);
            assert_eq!(brute_force_h_max(&sys, &pq, 4, 5).unwrap(), vec![expect, expect]);
        }
        let pq = Field::zeros(&g, Rank::Vector(2));
        assert!(brute_force_h_max(&sys, &pq, 0, 2).is_err());
        // even resolution has no 0 level: ties go to the smallest magnitude
        assert_relative_eq!(brute_force_h_max(&sys, &pq, 0, 4).unwrap()[0].abs(), 1.0 / 3.0, max_relative = 1e-15);
    }

    #[test]
    fn pullback_of_circle_is_minus_one() {
        let g = Grid::new(&[6.0], &[2001]).unwrap();
        let xi = Field::from_fn(&g, Rank::Vector(2), |t, o| {
            o[0] = t[0].cos();
            o[1] = t[0].sin();
        })
        .unwrap();
        let y = Field::from_fn(&g, Rank::Vector(2), |t, o| {
            o[0] = -t[0].sin();
            o[1] = t[0].cos();
        })
        .unwrap();
        let form = area_oneform_pullback(&xi, &y, &[1.0, 1.0]).unwrap();
        for v in form[0].values() {
            assert!((v + 1.0).abs() < 1e-4);
        }
        let scaled = area_oneform_pullback(&xi, &y, &[3.0, 3.0]).unwrap();
        assert_relative_eq!(scaled[0].values()[7], 3.0 * form[0].values()[7], max_relative = 1e-14);
        let c = Field::constant(&g, Rank::Vector(2), &[1.0, 2.0]).unwrap();
        assert_eq!(area_oneform_pullback(&c, &c, &[1.0, 1.0]).unwrap()[0].sup_norm(), 0.0);
    }

    #[test]
    fn desk_synthesis_beats_constants() {
        let sys = LinearFlowSystem::desk_rotation();
        let g = square(33);
        let zero = Field::zeros(&g, Rank::Jacobian { m: 2, n: 1 });
        let s = synthesize_bang_bang(&sys, &zero, None, 1.0).unwrap();
        let k = sys.k();
        for node in 0..g.node_count() {
            if s.switching.singular[node * k] {
                continue;
            }
            assert_eq!(brute_force_h_max(&sys, &s.costate.pq, node, 3).unwrap(), s.control.u.at(node));
        }
        let path = corner_path(&g).unwrap();
        for c in [-1.0, -0.5, 0.0, 0.5, 1.0] {
            let u = Field::constant(&g, Rank::Jacobian { m: 2, n: 1 }, &[c, c]).unwrap();
            let f = integrate_flow(&sys, &u, 1.0).unwrap();
            assert!(curvilinear_objective(&sys, &f.z, &path).unwrap() < s.objective);
        }
        // the sign changes at least once along the diagonal
        let signs: Vec<i8> = (0..33).map(|i| s.switching.signs[g.index(&[i, i])]).collect();
        assert!(signs.windows(2).any(|w| w[0] * w[1] < 0), "{signs:?}");
        let fp = fixed_point_synthesis(&sys, &zero, None, 1.0, 10).unwrap();
        assert!(fp.iterations >= 1);
        let mut csv = Vec::new();
        s.switching.write_csv(&mut csv).unwrap();
        assert!(String::from_utf8(csv).unwrap().starts_with("t1,t2,M1,sign1\n"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn flow_is_affine(z0 in prop::collection::vec(-2.0f64..2.0, 2), z1 in prop::collection::vec(-2.0f64..2.0, 2),
                          c0 in -1.0f64..1.0, c1 in -1.0f64..1.0, s in -2.0f64..2.0) {
            let g = square(9);
            let base = LinearFlowSystem::desk_rotation();
            let run = |z: Vec<f64>, c: f64| {
                let sys = base.with_initial_state(z).unwrap();
                let u = control(&g, 1, |t, o| { o[0] = c * (t[0] + t[1]); o[1] = c * (t[0] + t[1]); });
                integrate_flow(&sys, &u, 1.0).unwrap().z
            };
            let combo: Vec<f64> = z0.iter().zip(&z1).map(|(a, b)| a + s * b).collect();
            let lhs = run(combo, c0 + s * c1);
            let rhs = run(z0.clone(), c0).add(&run(z1.clone(), c1).scaled(s).unwrap()).unwrap();
            prop_assert!(lhs.sub(&rhs).unwrap().sup_norm() < 1e-10);
        }

        #[test]
        fn bang_matches_brute_force(p in -3.0f64..3.0, q in -3.0f64..3.0, b0 in -2.0f64..2.0, b1 in -2.0f64..2.0) {
            let sys = LinearFlowSystem::new(vec![DMatrix::zeros(2, 2)], DMatrix::from_column_slice(2, 1, &[b0, b1]),
                vec![1.0], vec![0.0, 0.0]).unwrap();
            let g = Grid::new(&[1.0], &[2]).unwrap();
            let pq = Field::constant(&g, Rank::Vector(2), &[p, q]).unwrap();
            let r = switching_functions(&pq, &sys, None).unwrap();
            let b = bang_control(&r);
            if !r.singular[0] {
                prop_assert_eq!(brute_force_h_max(&sys, &pq, 0, 7).unwrap(), b.u.at(0).to_vec());
            }
        }
    }
}
