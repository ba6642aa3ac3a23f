use crate::mtgrid::Grid;

/// One simplex of the Kuhn decomposition of a lattice cell.
///
/// Vertex `k + 1` is vertex `k` moved one step along `perm[k]`, so the P1
/// interpolant has `d f / d t^{perm[k]} = (f(v_{k+1}) - f(v_k)) / h_{perm[k]}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Simplex {
    pub vertices: Vec<usize>,
    pub perm: Vec<usize>,
}

/// Kuhn (Freudenthal) triangulation: every cell splits into `m!` simplices
/// of equal volume, one per axis permutation.
#[derive(Debug, Clone)]
pub struct KuhnComplex {
    grid: Grid,
    simplices: Vec<Simplex>,
    volume: f64,
    lumped: Vec<f64>,
}

impl KuhnComplex {
    pub fn new(grid: &Grid) -> Self {
        let m = grid.dim();
        let perms = permutations(m);
        let cells: Vec<usize> = (0..grid.node_count())
            .filter(|&n| (0..m).all(|a| grid.axis_index(n, a) + 1 < grid.resolution()[a]))
            .collect();
        let mut simplices = Vec::with_capacity(cells.len() * perms.len());
        for &base in &cells {
            for perm in &perms {
                let mut vertices = Vec::with_capacity(m + 1);
                let mut v = base;
                vertices.push(v);
                for &a in perm {
                    v += grid.stride(a);
                    vertices.push(v);
                }
                simplices.push(Simplex {
                    vertices,
                    perm: perm.clone(),
                });
            }
        }
        let factorial: f64 = (1..=m).map(|k| k as f64).product();
        let volume = grid.cell_volume() / factorial;
        let mut lumped = vec![0.0; grid.node_count()];
        for s in &simplices {
            for &v in &s.vertices {
                lumped[v] += volume / (m + 1) as f64;
            }
        }
        Self {
            grid: grid.clone(),
            simplices,
            volume,
            lumped,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn simplices(&self) -> &[Simplex] {
        &self.simplices
    }

    /// Common volume of every simplex.
    pub fn simplex_volume(&self) -> f64 {
        self.volume
    }

    /// Row-sum lumped mass per node; equals the cell volume at interior nodes.
    pub fn lumped_mass(&self) -> &[f64] {
        &self.lumped
    }

    /// Jacobian of the P1 interpolant of an `n`-component nodal array on
    /// simplex `s`, in the axis-major layout `out[alpha * n + i]`.
    pub fn simplex_jacobian(&self, s: &Simplex, values: &[f64], n: usize, out: &mut [f64]) {
        let h = self.grid.spacing();
        for (k, &a) in s.perm.iter().enumerate() {
            let (lo, hi) = (s.vertices[k], s.vertices[k + 1]);
            for i in 0..n {
                out[a * n + i] = (values[hi * n + i] - values[lo * n + i]) / h[a];
            }
        }
    }

    /// Gradient of the hat function of local vertex `j` on simplex `s`.
    pub fn basis_gradient(&self, s: &Simplex, j: usize, out: &mut [f64]) {
        let h = self.grid.spacing();
        for (k, &a) in s.perm.iter().enumerate() {
            let w = if j == k + 1 {
                1.0
            } else if j == k {
                -1.0
            } else {
                0.0
            };
            out[a] = w / h[a];
        }
    }

    /// Centroid of `s` in multitime coordinates.
    pub fn centroid(&self, s: &Simplex, out: &mut [f64]) {
        let m = self.grid.dim();
        out[..m].fill(0.0);
        for &v in &s.vertices {
            for (a, o) in out.iter_mut().enumerate().take(m) {
                *o += self.grid.coord(v, a);
            }
        }
        for o in out.iter_mut().take(m) {
            *o /= (m + 1) as f64;
        }
    }

    /// Vertex average of an `n`-component nodal array on `s`.
    pub fn average(&self, s: &Simplex, values: &[f64], n: usize, out: &mut [f64]) {
        out[..n].fill(0.0);
        for &v in &s.vertices {
            for i in 0..n {
                out[i] += values[v * n + i];
            }
        }
        let w = 1.0 / s.vertices.len() as f64;
        for o in out.iter_mut().take(n) {
            *o *= w;
        }
    }
}

/// All permutations of `0..m` in lexicographic order.
fn permutations(m: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..m).collect();
    loop {
        out.push(cur.clone());
        // next lexicographic permutation
        let Some(i) = (1..m).rev().find(|&i| cur[i - 1] < cur[i]) else {
            break;
        };
        let j = (i..m).rev().find(|&j| cur[j] > cur[i - 1]).unwrap();
        cur.swap(i - 1, j);
        cur[i..].reverse();
    }
    out
}
