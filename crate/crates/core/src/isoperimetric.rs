//! Closed surfaces in R^3: flux volume, surface area, the critical condition
//! `t = p N` and matched-area volume scans.
//!
//! Surfaces are sampled on a latitude-longitude chart. Latitude runs over
//! `n_theta` equal intervals of `[0, pi]` (both poles included as sample
//! rows), longitude over `n_phi` equal samples of `[0, 2 pi)`. Integrals use
//! the trapezoid rule in both chart directions, so pole rows carry half
//! weight. Normals are the cross product of the analytic chart partials.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mtgrid::format_float;

/// Shape generators. All are centred at the origin except a sphere with a
/// nonzero `center`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    Sphere {
        radius: f64,
        #[serde(default)]
        center: [f64; 3],
    },
    Ellipsoid { axes: [f64; 3] },
    /// `sum |t_i / a_i|^exponent = 1`, sampled radially; `exponent >= 2`.
    Superellipsoid { axes: [f64; 3], exponent: f64 },
}

impl Shape {
    pub fn unit_sphere() -> Self {
        Shape::Sphere {
            radius: 1.0,
            center: [0.0; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::DegenerateSurface(format!("{self:?}: {what}")));
        match self {
            Shape::Sphere { radius, center } => {
                if !(*radius > 0.0 && radius.is_finite()) {
                    return bad("radius must be positive");
                }
                if center.iter().any(|c| !c.is_finite()) {
                    return bad("center must be finite");
                }
            }
            Shape::Ellipsoid { axes } => {
                if axes.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
                    return bad("axes must be positive");
                }
            }
            Shape::Superellipsoid { axes, exponent } => {
                if axes.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
                    return bad("axes must be positive");
                }
                if !(*exponent >= 2.0 && exponent.is_finite()) {
                    return bad("exponent must be at least 2");
                }
            }
        }
        Ok(())
    }

    /// Short name without commas, used in scan tables.
    pub fn label(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("x");
        match self {
            Shape::Sphere { radius, center } if center.iter().all(|c| *c == 0.0) => format!("sphere_r{radius}"),
            Shape::Sphere { radius, center } => format!("sphere_r{radius}_at_{}", join(center)),
            Shape::Ellipsoid { axes } => format!("ellipsoid_{}", join(axes)),
            Shape::Superellipsoid { axes, exponent } => format!("superellipsoid_{}_e{exponent}", join(axes)),
        }
    }

    /// Position and the two chart partials at `(theta, phi)`.
    fn chart(&self, theta: f64, phi: f64) -> [[f64; 3]; 3] {
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = phi.sin_cos();
        let w = [st * cp, st * sp, ct];
        let w_t = [ct * cp, ct * sp, -st];
        let w_p = [-st * sp, st * cp, 0.0];
        match self {
            Shape::Sphere { radius, center } => {
                let r = *radius;
                [
                    std::array::from_fn(|i| center[i] + r * w[i]),
                    w_t.map(|v| r * v),
                    w_p.map(|v| r * v),
                ]
            }
            Shape::Ellipsoid { axes } => [
                std::array::from_fn(|i| axes[i] * w[i]),
                std::array::from_fn(|i| axes[i] * w_t[i]),
                std::array::from_fn(|i| axes[i] * w_p[i]),
            ],
            Shape::Superellipsoid { axes, exponent } => {
                let e = *exponent;
                // rho(w) = S^{-1/e}, S = sum |w_i/a_i|^e
                let s: f64 = (0..3).map(|i| (w[i] / axes[i]).abs().powf(e)).sum();
                let rho = s.powf(-1.0 / e);
                let ds = |dw: &[f64; 3]| -> f64 {
                    (0..3)
                        .map(|i| {
                            let q = w[i] / axes[i];
                            e * q.abs().powf(e - 1.0) * q.signum() * dw[i] / axes[i]
                        })
                        .sum()
                };
                let drho_t = -rho / (e * s) * ds(&w_t);
                let drho_p = -rho / (e * s) * ds(&w_p);
                [
                    w.map(|v| rho * v),
                    std::array::from_fn(|i| drho_t * w[i] + rho * w_t[i]),
                    std::array::from_fn(|i| drho_p * w[i] + rho * w_p[i]),
                ]
            }
        }
    }
}

/// Samples of a closed surface over a latitude-longitude chart.
#[derive(Debug, Clone)]
pub struct ClosedSurface {
    n_theta: usize,
    n_phi: usize,
    positions: Vec<[f64; 3]>,
    normals: Vec<[f64; 3]>,
    weights: Vec<f64>,
    pole: Vec<bool>,
}

fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: &[f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

impl ClosedSurface {
    /// Samples `shape` scaled by `scale` about the origin.
    pub fn sample(shape: &Shape, scale: f64, n_theta: usize, n_phi: usize) -> Result<Self> {
        shape.validate()?;
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::DegenerateSurface(format!("scale {scale} must be positive")));
        }
        if n_theta < 2 || n_phi < 3 {
            return Err(Error::DegenerateSurface(format!(
                "chart {n_theta}x{n_phi} too coarse (need at least 2x3)"
            )));
        }
        let dt = PI / n_theta as f64;
        let dp = 2.0 * PI / n_phi as f64;
        let count = (n_theta + 1) * n_phi;
        let mut s = Self {
            n_theta,
            n_phi,
            positions: Vec::with_capacity(count),
            normals: Vec::with_capacity(count),
            weights: Vec::with_capacity(count),
            pole: Vec::with_capacity(count),
        };
        for i in 0..=n_theta {
            let theta = i as f64 * dt;
            let pole = i == 0 || i == n_theta;
            for j in 0..n_phi {
                let [r, r_t, r_p] = shape.chart(theta, j as f64 * dp);
                s.positions.push(r.map(|v| scale * v));
                s.normals.push(cross(&r_t, &r_p).map(|v| scale * scale * v));
                s.weights.push(if pole { 0.5 * dt * dp } else { dt * dp });
                s.pole.push(pole);
            }
        }
        Ok(s)
    }

    pub fn chart_size(&self) -> (usize, usize) {
        (self.n_theta, self.n_phi)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    /// Unnormalized normals `d_theta r x d_phi r`.
    pub fn normals(&self) -> &[[f64; 3]] {
        &self.normals
    }

    /// Chart quadrature weights `d eta` (half at pole rows).
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn is_pole(&self, k: usize) -> bool {
        self.pole[k]
    }

    /// Area elements `|N| d eta`.
    pub fn area_elements(&self) -> Vec<f64> {
        self.normals.iter().zip(&self.weights).map(|(n, w)| norm(n) * w).collect()
    }
}

/// Enclosed volume from the flux of the position vector,
/// `(1/3) sum t . N d eta`.
pub fn flux_volume(s: &ClosedSurface) -> Result<f64> {
    let flux: f64 = s
        .positions
        .iter()
        .zip(&s.normals)
        .zip(&s.weights)
        .map(|((t, n), w)| dot(t, n) * w)
        .sum();
    let v = flux / 3.0;
    if !(v > 0.0) {
        return Err(Error::Orientation(v));
    }
    Ok(v)
}

pub fn surface_area(s: &ClosedSurface) -> f64 {
    s.area_elements().iter().sum()
}

/// Least-squares fit of `t = p N` over the non-pole samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CriticalReport {
    pub p_fit: f64,
    /// `sup |t - p_fit N|`.
    pub residual: f64,
}

impl CriticalReport {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("report is plain data")
    }
}

/// Fits `p` minimizing the area-weighted `sum |t - p N|^2` over non-pole
/// samples, then reports the sup-norm misfit. The value depends on where
/// the origin sits.
pub fn critical_condition_residual(s: &ClosedSurface) -> Result<CriticalReport> {
    let scale = s
        .positions
        .iter()
        .fold(0.0f64, |a, t| a.max(norm(t)))
        .max(f64::MIN_POSITIVE);
    let mut units = Vec::with_capacity(s.len());
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..s.len() {
        if s.pole[k] {
            continue;
        }
        let n = &s.normals[k];
        let len = norm(n);
        if !(len > 1e-12 * scale * scale) {
            return Err(Error::DegenerateSurface(format!("vanishing normal at sample {k}")));
        }
        let unit = n.map(|v| v / len);
        let w = len * s.weights[k];
        num += w * dot(&s.positions[k], &unit);
        den += w;
        units.push((k, unit));
    }
    let p_fit = num / den;
    let residual = units.iter().fold(0.0f64, |a, (k, unit)| {
        let t = &s.positions[*k];
        let d = [t[0] - p_fit * unit[0], t[1] - p_fit * unit[1], t[2] - p_fit * unit[2]];
        a.max(norm(&d))
    });
    Ok(CriticalReport { p_fit, residual })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanRow {
    pub shape: String,
    pub scale: f64,
    pub area: f64,
    pub volume: f64,
    /// Largest volume in the table.
    pub maximal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanTable {
    pub reference_area: f64,
    pub rows: Vec<ScanRow>,
}

impl ScanTable {
    pub fn maximal(&self) -> Option<&ScanRow> {
        self.rows.iter().find(|r| r.maximal)
    }

    /// CSV with header `shape,scale,area,volume`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "shape,scale,area,volume")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{}",
                r.shape,
                format_float(r.scale),
                format_float(r.area),
                format_float(r.volume)
            )?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("table is plain data")
    }
}

const MAX_BISECTIONS: usize = 200;

/// Scale factor at which the sampled area of `shape` matches `target` to
/// `1e-6` relative, found by bracketing and bisection.
pub fn match_area(shape: &Shape, target: f64, n_theta: usize, n_phi: usize) -> Result<(f64, ClosedSurface)> {
    if !(target > 0.0 && target.is_finite()) {
        return Err(Error::Bisection(format!("reference area {target} must be positive")));
    }
    let tol = 1e-6 * target;
    let at = |s: f64| -> Result<(f64, ClosedSurface)> {
        let surface = ClosedSurface::sample(shape, s, n_theta, n_phi)?;
        Ok((surface_area(&surface), surface))
    };
    let (a1, s1) = at(1.0)?;
    if (a1 - target).abs() <= tol {
        return Ok((1.0, s1));
    }
    let (mut lo, mut hi) = (1.0, 1.0);
    let (mut a_lo, mut a_hi) = (a1, a1);
    for _ in 0..MAX_BISECTIONS {
        if a_hi >= target {
            break;
        }
        lo = hi;
        a_lo = a_hi;
        hi *= 2.0;
        let a = at(hi)?.0;
        if a <= a_hi {
            return Err(Error::Bisection(format!("{}: area not increasing in scale", shape.label())));
        }
        a_hi = a;
    }
    for _ in 0..MAX_BISECTIONS {
        if a_lo <= target {
            break;
        }
        hi = lo;
        a_hi = a_lo;
        lo *= 0.5;
        let a = at(lo)?.0;
        if a >= a_lo {
            return Err(Error::Bisection(format!("{}: area not increasing in scale", shape.label())));
        }
        a_lo = a;
    }
    if !(a_lo <= target && target <= a_hi) {
        return Err(Error::Bisection(format!("{}: could not bracket area {target}", shape.label())));
    }
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        let (a, surface) = at(mid)?;
        if (a - target).abs() <= tol {
            return Ok((mid, surface));
        }
        if !(a_lo..=a_hi).contains(&a) {
            return Err(Error::Bisection(format!("{}: area not monotone in scale", shape.label())));
        }
        if a < target {
            lo = mid;
            a_lo = a;
        } else {
            hi = mid;
            a_hi = a;
        }
    }
    Err(Error::Bisection(format!(
        "{}: no convergence after {MAX_BISECTIONS} bisections",
        shape.label()
    )))
}

/// Rescales every shape to `reference_area` and tabulates its volume. The
/// row with the largest volume is flagged `maximal`.
pub fn isoperimetric_scan(shapes: &[Shape], reference_area: f64, n_theta: usize, n_phi: usize) -> Result<ScanTable> {
    let mut rows = Vec::with_capacity(shapes.len());
    for shape in shapes {
        let (scale, surface) = match_area(shape, reference_area, n_theta, n_phi)?;
        rows.push(ScanRow {
            shape: shape.label(),
            scale,
            area: surface_area(&surface),
            volume: flux_volume(&surface)?,
            maximal: false,
        });
    }
    let best = rows
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.volume.total_cmp(&b.1.volume))
        .map(|(k, _)| k);
    if let Some(k) = best {
        rows[k].maximal = true;
    }
    Ok(ScanTable { reference_area, rows })
}

/// The default comparison family: unit sphere, ellipsoids (1,1,2) and
/// (1,2,3), and the box-like superellipsoid `t1^4 + t2^4 + t3^4 = 1`.
pub fn default_shapes() -> Vec<Shape> {
    vec![
        Shape::unit_sphere(),
        Shape::Ellipsoid { axes: [1.0, 1.0, 2.0] },
        Shape::Ellipsoid { axes: [1.0, 2.0, 3.0] },
        Shape::Superellipsoid {
            axes: [1.0, 1.0, 1.0],
            exponent: 4.0,
        },
    ]
}
