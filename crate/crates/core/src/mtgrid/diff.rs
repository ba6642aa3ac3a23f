use crate::error::{Error, Result};
use crate::mtgrid::{Field, Grid, Rank};

/// Finite-difference stencil family.
///
/// `Central` uses the 3-point centered stencil in the interior and
/// second-order one-sided stencils on the two faces. `Forward` and `Backward`
/// use second-order one-sided stencils everywhere they fit, switching to the
/// opposite side near the far face. On an axis with only two nodes every
/// scheme degrades to the exact two-point difference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scheme {
    #[default]
    Central,
    Forward,
    Backward,
}

/// Partial derivative of a scalar or vector field along `axis` (0-based).
pub fn partial_derivative(f: &Field, axis: usize, scheme: Scheme) -> Result<Field> {
    let grid = f.grid();
    if axis >= grid.dim() {
        return Err(Error::AxisOutOfRange {
            axis,
            dim: grid.dim(),
        });
    }
    if f.rank().vector_len().is_none() {
        return Err(Error::RankMismatch {
            expected: "scalar or vector".into(),
            found: f.rank().to_string(),
        });
    }
    let k = f.components();
    let mut out = vec![0.0; f.values().len()];
    diff_into(grid, f.values(), k, 0, k, axis, scheme, &mut out, k, 0);
    Field::new(grid, f.rank(), out)
}

/// Discrete Jacobian `u^i_alpha = d x^i / d t^alpha` with the central scheme.
pub fn jacobian(x: &Field) -> Result<Field> {
    let grid = x.grid();
    let n = x.rank().vector_len().ok_or_else(|| Error::RankMismatch {
        expected: "scalar or vector".into(),
        found: x.rank().to_string(),
    })?;
    let m = grid.dim();
    let mut out = vec![0.0; grid.node_count() * m * n];
    for a in 0..m {
        diff_into(grid, x.values(), n, 0, n, a, Scheme::Central, &mut out, m * n, a * n);
    }
    Field::new(grid, Rank::Jacobian { m, n }, out)
}

/// `sum_alpha d p^alpha_j / d t^alpha` for a jacobian-rank field.
pub fn total_divergence(p: &Field) -> Result<Field> {
    let grid = p.grid();
    let (m, n) = match p.rank() {
        Rank::Jacobian { m, n } => (m, n),
        other => {
            return Err(Error::RankMismatch {
                expected: "jacobian".into(),
                found: other.to_string(),
            })
        }
    };
    let mut out = vec![0.0; grid.node_count() * n];
    let mut tmp = vec![0.0; grid.node_count() * n];
    for a in 0..m {
        diff_into(grid, p.values(), m * n, a * n, n, a, Scheme::Central, &mut tmp, n, 0);
        for (o, t) in out.iter_mut().zip(&tmp) {
            *o += t;
        }
    }
    Field::new(grid, Rank::Vector(n), out)
}

/// Differentiates `width` components starting at `src_off` inside records of
/// `src_stride` values, writing into records of `dst_stride` at `dst_off`.
#[allow(clippy::too_many_arguments)]
fn diff_into(
    grid: &Grid,
    src: &[f64],
    src_stride: usize,
    src_off: usize,
    width: usize,
    axis: usize,
    scheme: Scheme,
    dst: &mut [f64],
    dst_stride: usize,
    dst_off: usize,
) {
    let r = grid.resolution()[axis];
    let h = grid.spacing()[axis];
    let s = grid.stride(axis);
    let at = |node: usize, c: usize| src[node * src_stride + src_off + c];
    for node in 0..grid.node_count() {
        let i = grid.axis_index(node, axis);
        for c in 0..width {
            let d = if r == 2 {
                let base = node - i * s;
                (at(base + s, c) - at(base, c)) / h
            } else {
                let fwd = || (-3.0 * at(node, c) + 4.0 * at(node + s, c) - at(node + 2 * s, c)) / (2.0 * h);
                let bwd = || (3.0 * at(node, c) - 4.0 * at(node - s, c) + at(node - 2 * s, c)) / (2.0 * h);
                match scheme {
                    Scheme::Central if i == 0 => fwd(),
                    Scheme::Central if i + 1 == r => bwd(),
                    Scheme::Central => (at(node + s, c) - at(node - s, c)) / (2.0 * h),
                    Scheme::Forward if i + 2 < r => fwd(),
                    Scheme::Forward => bwd(),
                    Scheme::Backward if i >= 2 => bwd(),
                    Scheme::Backward => fwd(),
                }
            };
            dst[node * dst_stride + dst_off + c] = d;
        }
    }
}
