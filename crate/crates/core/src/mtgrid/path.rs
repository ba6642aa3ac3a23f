use crate::error::{Error, Result};
use crate::mtgrid::{Field, Grid, Rank};

/// Order in which a staircase spends its steps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PathPattern {
    /// Exhaust the axes one after another in the given (0-based) order.
    AxisMajor(Vec<usize>),
    /// Cycle through the axes, taking one step on each axis that still has
    /// steps left.
    Interleaved,
}

impl PathPattern {
    /// Axis-major in natural order `0, 1, .., m-1`.
    pub fn forward(m: usize) -> Self {
        PathPattern::AxisMajor((0..m).collect())
    }

    /// Axis-major in reversed order `m-1, .., 0`.
    pub fn reversed(m: usize) -> Self {
        PathPattern::AxisMajor((0..m).rev().collect())
    }
}

/// Monotone lattice path from node 0; each step raises one index by one.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticePath {
    grid: Grid,
    nodes: Vec<usize>,
    axes: Vec<usize>,
}

impl LatticePath {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Flat node indices, starting at the origin node.
    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    /// Axis of each step; `axes()[s]` joins `nodes()[s]` and `nodes()[s + 1]`.
    pub fn axes(&self) -> &[usize] {
        &self.axes
    }

    pub fn step_count(&self) -> usize {
        self.axes.len()
    }

    pub fn multi_indices(&self) -> Vec<Vec<usize>> {
        self.nodes.iter().map(|&n| self.grid.multi_index(n)).collect()
    }
}

pub fn staircase_path(grid: &Grid, target: &[usize], pattern: &PathPattern) -> Result<LatticePath> {
    if !grid.contains(target) {
        return Err(Error::TargetOutOfBounds {
            target: target.to_vec(),
        });
    }
    let m = grid.dim();
    let mut axes = Vec::with_capacity(target.iter().sum());
    match pattern {
        PathPattern::AxisMajor(order) => {
            let mut seen = vec![false; m];
            for &a in order {
                if a >= m || seen[a] {
                    return Err(Error::InvalidPattern(format!(
                        "axis order {order:?} is not a permutation of 0..{m}"
                    )));
                }
                seen[a] = true;
            }
            if order.len() != m {
                return Err(Error::InvalidPattern(format!(
                    "axis order {order:?} is not a permutation of 0..{m}"
                )));
            }
            for &a in order {
                axes.extend(std::iter::repeat_n(a, target[a]));
            }
        }
        PathPattern::Interleaved => {
            let mut left = target.to_vec();
            while left.iter().any(|&l| l > 0) {
                for a in 0..m {
                    if left[a] > 0 {
                        left[a] -= 1;
                        axes.push(a);
                    }
                }
            }
        }
    }
    let mut nodes = Vec::with_capacity(axes.len() + 1);
    let mut node = 0;
    nodes.push(node);
    for &a in &axes {
        node += grid.stride(a);
        nodes.push(node);
    }
    Ok(LatticePath {
        grid: grid.clone(),
        nodes,
        axes,
    })
}

/// Trapezoid rule for `int L_alpha dt^alpha` along a staircase.
pub fn path_integral(omega: &[Field], path: &LatticePath) -> Result<f64> {
    let grid = path.grid();
    if omega.len() != grid.dim() {
        return Err(Error::ShapeMismatch {
            expected: grid.dim(),
            found: omega.len(),
        });
    }
    for l in omega {
        if l.grid() != grid {
            return Err(Error::GridMismatch);
        }
        if l.rank() != Rank::Scalar {
            return Err(Error::RankMismatch {
                expected: "scalar".into(),
                found: l.rank().to_string(),
            });
        }
    }
    let h = grid.spacing();
    let total = path
        .axes()
        .iter()
        .zip(path.nodes().windows(2))
        .map(|(&a, w)| {
            let l = omega[a].values();
            h[a] * 0.5 * (l[w[0]] + l[w[1]])
        })
        .sum();
    Ok(total)
}
