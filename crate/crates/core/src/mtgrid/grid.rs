use serde::Serialize;

use crate::error::{Error, Result};

/// Rectangular lattice over the parallelepiped `[origin, origin + extents]`.
///
/// Nodes are numbered lexicographically in their multi-index with the last
/// axis varying fastest, so node `(i1, .., im)` has flat index
/// `sum_a i_a * stride_a`. This ordering is the canonical layout of every
/// field and every export.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Grid {
    origin: Vec<f64>,
    extents: Vec<f64>,
    resolution: Vec<usize>,
    spacing: Vec<f64>,
    #[serde(skip)]
    strides: Vec<usize>,
}

impl Grid {
    /// Grid anchored at the origin, covering `[0, extents]`.
    pub fn new(extents: &[f64], resolution: &[usize]) -> Result<Self> {
        Self::with_origin(&vec![0.0; extents.len()], extents, resolution)
    }

    pub fn with_origin(origin: &[f64], extents: &[f64], resolution: &[usize]) -> Result<Self> {
        if extents.is_empty() {
            return Err(Error::InvalidGrid {
                axis: 0,
                reason: "a grid needs at least one axis".into(),
            });
        }
        if extents.len() != resolution.len() || origin.len() != extents.len() {
            return Err(Error::InvalidGrid {
                axis: extents.len().min(resolution.len()).min(origin.len()) + 1,
                reason: format!(
                    "origin, extents and resolution disagree on the dimension ({}, {}, {})",
                    origin.len(),
                    extents.len(),
                    resolution.len()
                ),
            });
        }
        for (a, (&e, &r)) in extents.iter().zip(resolution).enumerate() {
            if !(e.is_finite() && e > 0.0) {
                return Err(Error::InvalidGrid {
                    axis: a + 1,
                    reason: format!("extent must be positive, got {e}"),
                });
            }
            if r < 2 {
                return Err(Error::InvalidGrid {
                    axis: a + 1,
                    reason: format!("resolution must be at least 2, got {r}"),
                });
            }
            if !origin[a].is_finite() {
                return Err(Error::InvalidGrid {
                    axis: a + 1,
                    reason: "origin must be finite".into(),
                });
            }
        }
        let spacing = extents
            .iter()
            .zip(resolution)
            .map(|(&e, &r)| e / (r - 1) as f64)
            .collect();
        let mut strides = vec![1; extents.len()];
        for a in (0..extents.len() - 1).rev() {
            strides[a] = strides[a + 1] * resolution[a + 1];
        }
        Ok(Self {
            origin: origin.to_vec(),
            extents: extents.to_vec(),
            resolution: resolution.to_vec(),
            spacing,
            strides,
        })
    }

    pub fn dim(&self) -> usize {
        self.extents.len()
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    pub fn extents(&self) -> &[f64] {
        &self.extents
    }

    pub fn resolution(&self) -> &[usize] {
        &self.resolution
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.strides[axis]
    }

    pub fn max_spacing(&self) -> f64 {
        self.spacing.iter().cloned().fold(0.0, f64::max)
    }

    /// Volume of one lattice cell, the product of the spacings.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    pub fn node_count(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn multi_index(&self, mut node: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        for a in 0..self.dim() {
            out[a] = node / self.strides[a];
            node %= self.strides[a];
        }
        out
    }

    /// Index of `node` along `axis`.
    pub fn axis_index(&self, node: usize, axis: usize) -> usize {
        (node / self.strides[axis]) % self.resolution[axis]
    }

    pub fn coord(&self, node: usize, axis: usize) -> f64 {
        self.origin[axis] + self.axis_index(node, axis) as f64 * self.spacing[axis]
    }

    pub fn coords(&self, node: usize) -> Vec<f64> {
        (0..self.dim()).map(|a| self.coord(node, a)).collect()
    }

    pub fn contains(&self, multi: &[usize]) -> bool {
        multi.len() == self.dim() && multi.iter().zip(&self.resolution).all(|(i, r)| i < r)
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        (0..self.dim()).any(|a| {
            let i = self.axis_index(node, a);
            i == 0 || i + 1 == self.resolution[a]
        })
    }

    pub fn interior_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.node_count()).filter(move |&n| !self.is_boundary(n))
    }

    pub fn boundary_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.node_count()).filter(move |&n| self.is_boundary(n))
    }

    /// Node at the far corner `t0`.
    pub fn far_corner(&self) -> Vec<usize> {
        self.resolution.iter().map(|r| r - 1).collect()
    }
}

/// Builds a grid over `[0, extents]` with `resolution` nodes per axis.
pub fn make_grid(extents: &[f64], resolution: &[usize]) -> Result<Grid> {
    Grid::new(extents, resolution)
}
