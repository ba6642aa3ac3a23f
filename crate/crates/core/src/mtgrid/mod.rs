//! Multitime domains: lattices, fields, finite differences, staircase paths
//! and the simplicial decomposition of lattice cells.

mod diff;
mod field;
mod grid;
mod path;
mod simplex;

pub use diff::{jacobian, partial_derivative, total_divergence, Scheme};
pub use field::{format_float, Field, Rank};
pub use grid::{make_grid, Grid};
pub use path::{path_integral, staircase_path, LatticePath, PathPattern};
pub use simplex::{KuhnComplex, Simplex};
