use std::fmt;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::mtgrid::Grid;

/// Per-node value layout of a [`Field`].
///
/// Jacobian entries are stored axis-major: entry `alpha * n + i` holds
/// `u^i_alpha`, the derivative of component `i` along axis `alpha`. Matrix
/// entries are row-major `alpha * m + beta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rank {
    Scalar,
    Vector(usize),
    Jacobian { m: usize, n: usize },
    Matrix(usize),
}

impl Rank {
    pub fn components(&self) -> usize {
        match *self {
            Rank::Scalar => 1,
            Rank::Vector(n) => n,
            Rank::Jacobian { m, n } => m * n,
            Rank::Matrix(m) => m * m,
        }
    }

    /// Component count when the rank is scalar or vector; a scalar is a
    /// one-component vector.
    pub fn vector_len(&self) -> Option<usize> {
        match *self {
            Rank::Scalar => Some(1),
            Rank::Vector(n) => Some(n),
            _ => None,
        }
    }
}

impl fmt::Display for Rank {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rank::Scalar => write!(f, "scalar"),
            Rank::Vector(n) => write!(f, "vector({n})"),
            Rank::Jacobian { m, n } => write!(f, "jacobian({m}x{n})"),
            Rank::Matrix(m) => write!(f, "matrix({m}x{m})"),
        }
    }
}

/// Lattice-indexed values. Every constructor rejects NaN and infinities.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    rank: Rank,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: &Grid, rank: Rank, values: Vec<f64>) -> Result<Self> {
        match rank {
            Rank::Jacobian { m, .. } | Rank::Matrix(m) if m != grid.dim() => {
                return Err(Error::RankMismatch {
                    expected: format!("leading dimension {}", grid.dim()),
                    found: rank.to_string(),
                })
            }
            _ => {}
        }
        let expected = grid.node_count() * rank.components();
        if values.len() != expected {
            return Err(Error::ShapeMismatch {
                expected,
                found: values.len(),
            });
        }
        let k = rank.components().max(1);
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                node: grid.multi_index(pos / k),
            });
        }
        Ok(Self {
            grid: grid.clone(),
            rank,
            values,
        })
    }

    pub fn zeros(grid: &Grid, rank: Rank) -> Self {
        Self {
            grid: grid.clone(),
            rank,
            values: vec![0.0; grid.node_count() * rank.components()],
        }
    }

    /// Samples `f(t, out)` at every node; `out` has one slot per component.
    pub fn from_fn<F>(grid: &Grid, rank: Rank, mut f: F) -> Result<Self>
    where
        F: FnMut(&[f64], &mut [f64]),
    {
        let k = rank.components();
        let mut values = vec![0.0; grid.node_count() * k];
        for (node, out) in values.chunks_mut(k.max(1)).enumerate() {
            f(&grid.coords(node), out);
        }
        Self::new(grid, rank, values)
    }

    pub fn scalar_from_fn<F>(grid: &Grid, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64,
    {
        Self::from_fn(grid, Rank::Scalar, |t, out| out[0] = f(t))
    }

    pub fn constant(grid: &Grid, rank: Rank, value: &[f64]) -> Result<Self> {
        Self::from_fn(grid, rank, |_, out| out.copy_from_slice(value))
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn rank(&self) -> Rank {
        self.rank
    }

    pub fn components(&self) -> usize {
        self.rank.components()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn at(&self, node: usize) -> &[f64] {
        let k = self.components();
        &self.values[node * k..(node + 1) * k]
    }

    pub fn value(&self, node: usize, component: usize) -> f64 {
        self.values[node * self.components() + component]
    }

    /// Extracts one component as a scalar field.
    pub fn component(&self, c: usize) -> Field {
        let k = self.components();
        Field {
            grid: self.grid.clone(),
            rank: Rank::Scalar,
            values: self.values.iter().skip(c).step_by(k).copied().collect(),
        }
    }

    /// Stacks scalar or vector fields into one vector field.
    pub fn stack(fields: &[&Field]) -> Result<Field> {
        let first = fields.first().ok_or(Error::ShapeMismatch {
            expected: 1,
            found: 0,
        })?;
        let grid = first.grid();
        let mut widths = Vec::with_capacity(fields.len());
        for f in fields {
            if f.grid() != grid {
                return Err(Error::GridMismatch);
            }
            widths.push(f.rank().vector_len().ok_or_else(|| Error::RankMismatch {
                expected: "scalar or vector".into(),
                found: f.rank().to_string(),
            })?);
        }
        let total: usize = widths.iter().sum();
        let mut values = Vec::with_capacity(grid.node_count() * total);
        for node in 0..grid.node_count() {
            for f in fields {
                values.extend_from_slice(f.at(node));
            }
        }
        Field::new(grid, Rank::Vector(total), values)
    }

    pub fn same_grid(&self, other: &Field) -> Result<()> {
        if self.grid == other.grid {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    pub fn sub(&self, other: &Field) -> Result<Field> {
        self.same_grid(other)?;
        if self.rank != other.rank {
            return Err(Error::RankMismatch {
                expected: self.rank.to_string(),
                found: other.rank.to_string(),
            });
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        Field::new(&self.grid, self.rank, values)
    }

    pub fn add(&self, other: &Field) -> Result<Field> {
        let neg = other.scaled(-1.0)?;
        self.sub(&neg)
    }

    pub fn scaled(&self, s: f64) -> Result<Field> {
        Field::new(&self.grid, self.rank, self.values.iter().map(|v| v * s).collect())
    }

    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> Result<Field> {
        Field::new(&self.grid, self.rank, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Sup-norm restricted to interior nodes.
    pub fn interior_sup_norm(&self) -> f64 {
        let k = self.components();
        self.grid
            .interior_nodes()
            .flat_map(|n| self.values[n * k..(n + 1) * k].iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Writes `t1,...,tm,v1,...,vk` rows in lexicographic node order with 17
    /// significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let m = self.grid.dim();
        let k = self.components();
        let header: Vec<String> = (1..=m)
            .map(|a| format!("t{a}"))
            .chain((1..=k).map(|c| format!("v{c}")))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        let mut line = String::new();
        for node in 0..self.grid.node_count() {
            line.clear();
            for a in 0..m {
                line.push_str(&format_float(self.grid.coord(node, a)));
                line.push(',');
            }
            for (c, v) in self.at(node).iter().enumerate() {
                if c > 0 {
                    line.push(',');
                }
                line.push_str(&format_float(*v));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    /// Reads a field written by [`Field::write_csv`]. Node coordinates must
    /// match `grid` to within a relative 1e-9 of the spacing.
    pub fn read_csv<R: BufRead>(grid: &Grid, rank: Rank, reader: R) -> Result<Field> {
        let m = grid.dim();
        let k = rank.components();
        let mut lines = reader.lines();
        let header = lines.next().ok_or(Error::Csv {
            line: 1,
            message: "empty file".into(),
        })??;
        let cols = header.split(',').count();
        if cols != m + k {
            return Err(Error::Csv {
                line: 1,
                message: format!("expected {} columns, found {cols}", m + k),
            });
        }
        let mut values = Vec::with_capacity(grid.node_count() * k);
        for node in 0..grid.node_count() {
            let lineno = node + 2;
            let line = lines.next().ok_or(Error::Csv {
                line: lineno,
                message: "missing row".into(),
            })??;
            let row: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Csv {
                    line: lineno,
                    message: e.to_string(),
                })?;
            if row.len() != m + k {
                return Err(Error::Csv {
                    line: lineno,
                    message: format!("expected {} columns, found {}", m + k, row.len()),
                });
            }
            for a in 0..m {
                if (row[a] - grid.coord(node, a)).abs() > 1e-9 * grid.spacing()[a] {
                    return Err(Error::Csv {
                        line: lineno,
                        message: format!("coordinate t{} does not match the grid", a + 1),
                    });
                }
            }
            values.extend_from_slice(&row[m..]);
        }
        Field::new(grid, rank, values)
    }
}

/// Fixed-format float with 17 significant digits.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Grid {
        Grid::new(&[1.0, 2.0], &[3, 3]).unwrap()
    }

    #[test]
    fn rejects_non_finite_and_bad_shapes() {
        let g = grid();
        let mut v = vec![0.0; 9];
        v[4] = f64::NAN;
        match Field::new(&g, Rank::Scalar, v) {
            Err(Error::NonFinite { node }) => assert_eq!(node, vec![1, 1]),
            other => panic!("{other:?}"),
        }
        assert!(Field::new(&g, Rank::Scalar, vec![0.0; 8]).is_err());
        assert!(Field::new(&g, Rank::Matrix(3), vec![0.0; 81]).is_err());
    }

    #[test]
    fn component_and_stack_are_inverse() {
        let g = grid();
        let f = Field::from_fn(&g, Rank::Vector(2), |t, o| {
            o[0] = t[0];
            o[1] = t[1] * 3.0;
        })
        .unwrap();
        let a = f.component(0);
        let b = f.component(1);
        assert_eq!(Field::stack(&[&a, &b]).unwrap(), f);
    }

    #[test]
    fn csv_header_and_roundtrip() {
        let g = grid();
        let f = Field::scalar_from_fn(&g, |t| t[0] + 0.1 * t[1]).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t1,t2,v1\n"));
        assert_eq!(text.lines().count(), 10);
        let back = Field::read_csv(&g, Rank::Scalar, &buf[..]).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn interior_norm_ignores_boundary() {
        let g = grid();
        let f = Field::scalar_from_fn(&g, |t| if t[0] == 0.0 { 5.0 } else { 1.0 }).unwrap();
        assert_eq!(f.sup_norm(), 5.0);
        assert_eq!(f.interior_sup_norm(), 1.0);
    }
}
