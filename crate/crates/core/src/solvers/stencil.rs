use crate::mtgrid::KuhnComplex;

/// Assembled P1 stiffness `K_ij = sum_T w_T vol_T h_T^{ab} dphi_i/da dphi_j/db`
/// stored row-wise with the diagonal split out.
pub(crate) struct Stencil {
    rows: Vec<Vec<(usize, f64)>>,
    diag: Vec<f64>,
}

impl Stencil {
    /// `weights[k]` scales simplex `k`; `metric[k * m * m..]` is its domain
    /// metric, or identity when `metric` is empty.
    pub fn assemble(complex: &KuhnComplex, weights: &[f64], metric: &[f64]) -> Self {
        let grid = complex.grid();
        let m = grid.dim();
        let count = grid.node_count();
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); count];
        let mut diag = vec![0.0; count];
        let vol = complex.simplex_volume();
        let mut grads = vec![0.0; (m + 1) * m];
        for (k, s) in complex.simplices().iter().enumerate() {
            for j in 0..=m {
                complex.basis_gradient(s, j, &mut grads[j * m..(j + 1) * m]);
            }
            let w = weights[k] * vol;
            let h = if metric.is_empty() { None } else { Some(&metric[k * m * m..(k + 1) * m * m]) };
            for j in 0..=m {
                let gj = &grads[j * m..(j + 1) * m];
                for l in 0..=m {
                    let gl = &grads[l * m..(l + 1) * m];
                    let mut e = 0.0;
                    match h {
                        None => {
                            for a in 0..m {
                                e += gj[a] * gl[a];
                            }
                        }
                        Some(h) => {
                            for a in 0..m {
                                for b in 0..m {
                                    e += h[a * m + b] * gj[a] * gl[b];
                                }
                            }
                        }
                    }
                    if e == 0.0 {
                        continue;
                    }
                    let (vj, vl) = (s.vertices[j], s.vertices[l]);
                    if vj == vl {
                        diag[vj] += w * e;
                    } else {
                        let row = &mut rows[vj];
                        match row.iter_mut().find(|(c, _)| *c == vl) {
                            Some(entry) => entry.1 += w * e,
                            None => row.push((vl, w * e)),
                        }
                    }
                }
            }
        }
        for row in &mut rows {
            row.sort_by_key(|(c, _)| *c);
        }
        Self { rows, diag }
    }

    /// `(K x)_i` for component `c` of an `n`-component array.
    pub fn apply(&self, x: &[f64], n: usize, c: usize, i: usize) -> f64 {
        let off: f64 = self.rows[i].iter().map(|&(j, k)| k * x[j * n + c]).sum();
        self.diag[i] * x[i * n + c] + off
    }

    /// One lexicographic SOR sweep over the `free` nodes.
    pub fn sor_sweep(&self, x: &mut [f64], n: usize, omega: f64, free: &[usize]) {
        for &i in free {
            let d = self.diag[i];
            for c in 0..n {
                let off: f64 = self.rows[i].iter().map(|&(j, k)| k * x[j * n + c]).sum();
                let gs = -off / d;
                x[i * n + c] += omega * (gs - x[i * n + c]);
            }
        }
    }

    /// `sup_i |scale_c (K x)_i / mass_i|` over the `free` nodes.
    pub fn residual(&self, x: &[f64], n: usize, free: &[usize], mass: &[f64], scale: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for &i in free {
            for c in 0..n {
                worst = worst.max((scale[c] * self.apply(x, n, c, i) / mass[i]).abs());
            }
        }
        worst
    }
}
