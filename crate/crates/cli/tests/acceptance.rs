//! Acceptance suite. Each criterion prints one `[PASS]`/`[FAIL]` line; the
//! process exits non-zero if any criterion fails.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use multitime::bangbang::{
    brute_force_h_max, corner_path, curvilinear_objective, integrate_flow, synthesize_bang_bang, LinearFlowSystem,
};
use multitime::expr::Expr;
use multitime::integrability::check_closed_control;
use multitime::isoperimetric::{
    critical_condition_residual, flux_volume, isoperimetric_scan, surface_area, ClosedSurface, Shape,
};
use multitime::mtgrid::{jacobian, Field, Grid, Rank};
use multitime::solvers::{solve_harmonic, solve_minimal_graph, SolveOptions, SolveResult};
use multitime::variational::{
    adjoint_residual, el_residual, pmp_certificate, DomainMetric, LagrangianSpec, PmpTolerances, TargetMetric,
};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn unit_square(r: usize) -> Grid {
    Grid::new(&[1.0, 1.0], &[r, r]).unwrap()
}

fn opts(tol: f64, max_iterations: usize) -> SolveOptions {
    SolveOptions {
        tolerance: tol,
        max_iterations,
        ..Default::default()
    }
}

fn quadratic(t: &[f64]) -> f64 {
    t[0] * t[0] - t[1] * t[1]
}

fn harmonic_quadratic(r: usize, tol: f64) -> SolveResult {
    let g = unit_square(r);
    let b = Field::scalar_from_fn(&g, quadratic).unwrap();
    solve_harmonic(&g, &b, &DomainMetric::Identity, &TargetMetric::Identity, &opts(tol, 50_000)).unwrap()
}

fn scherk(t: &[f64]) -> f64 {
    t[1].cos().ln() - t[0].cos().ln()
}

fn scherk_grid(r: usize) -> Grid {
    Grid::with_origin(&[-0.5, -0.5], &[1.0, 1.0], &[r, r]).unwrap()
}

fn c1_harmonic_exactness() -> Outcome {
    let start = Instant::now();
    let r = harmonic_quadratic(33, 1e-10);
    let secs = start.elapsed().as_secs_f64();
    let exact = Field::scalar_from_fn(r.x.grid(), quadratic).unwrap();
    let err = r.x.sub(&exact).unwrap().interior_sup_norm();
    check(
        r.converged && err <= 1e-9 && secs < 5.0,
        format!("interior sup error {err:.2e} (<= 1e-9), {secs:.2} s (< 5 s)"),
    )
}

/// Mean-curvature operator of the Scherk formula by symbolic differentiation.
fn scherk_symbolic_residual() -> f64 {
    let f = Expr::parse("ln(cos(t2)) - ln(cos(t1))", &["t1", "t2"]).unwrap();
    let (fx, fy) = (f.derivative(0), f.derivative(1));
    let (fxx, fxy, fyy) = (fx.derivative(0), fx.derivative(1), fy.derivative(1));
    let mut worst: f64 = 0.0;
    for i in 0..=10 {
        for j in 0..=10 {
            let t = [-0.5 + 0.1 * i as f64, -0.5 + 0.1 * j as f64];
            let (px, py) = (fx.eval(&t), fy.eval(&t));
            let mse =
                (1.0 + py * py) * fxx.eval(&t) - 2.0 * px * py * fxy.eval(&t) + (1.0 + px * px) * fyy.eval(&t);
            worst = worst.max(mse.abs());
        }
    }
    worst
}

fn c2_minimal_graph_order() -> Outcome {
    let oracle = scherk_symbolic_residual();
    if oracle > 1e-12 {
        return Err(format!("Scherk formula is not minimal: symbolic residual {oracle:e}"));
    }
    let mut errors = Vec::new();
    let mut worst_residual: f64 = 0.0;
    for r in [17, 33, 65] {
        let g = scherk_grid(r);
        let b = Field::scalar_from_fn(&g, scherk).unwrap();
        let s = solve_minimal_graph(&g, &b, &opts(1e-9, 200_000)).unwrap();
        if !s.converged {
            return Err(format!("{r}^2 did not converge (residual {:e})", s.final_residual));
        }
        worst_residual = worst_residual.max(s.final_residual);
        let exact = Field::scalar_from_fn(&g, scherk).unwrap();
        errors.push(s.x.sub(&exact).unwrap().sup_norm());
    }
    let ratios = [errors[0] / errors[1], errors[1] / errors[2]];
    let ok = ratios.iter().all(|q| (3.4..=4.6).contains(q)) && worst_residual <= 1e-6;
    check(
        ok,
        format!(
            "errors {:.3e}, {:.3e}, {:.3e}; ratios {:.3}, {:.3} (in [3.4, 4.6]); EL residual {worst_residual:.1e} (<= 1e-6); symbolic oracle {oracle:.1e}",
            errors[0], errors[1], errors[2], ratios[0], ratios[1]
        ),
    )
}

fn c3_pmp_identity() -> Outcome {
    let g = scherk_grid(33);
    let b = Field::scalar_from_fn(&g, scherk).unwrap();
    let cases = [
        (LagrangianSpec::energy(), harmonic_quadratic(33, 1e-10)),
        (LagrangianSpec::graph_area(), solve_minimal_graph(&g, &b, &opts(1e-9, 100_000)).unwrap()),
    ];
    let mut details = Vec::new();
    let mut ok = true;
    for (spec, r) in &cases {
        ok &= r.converged;
        let adj = adjoint_residual(spec, &r.x).unwrap();
        let el = el_residual(spec, &r.x).unwrap();
        let gap = adj
            .values()
            .iter()
            .zip(el.values())
            .fold(0.0_f64, |m, (a, e)| m.max((a - e).abs()));
        let report = pmp_certificate(spec, &r.x, &r.u, PmpTolerances::uniform(1.0), false).unwrap();
        let bound = 1e-8 * (1.0 + report.costate_norm);
        ok &= gap <= 1e-10 && report.criticality_residual <= bound;
        details.push(format!(
            "gap {gap:.1e}, criticality {:.1e} (<= {bound:.1e})",
            report.criticality_residual
        ));
    }
    check(ok, format!("energy: {}; graph area: {}", details[0], details[1]))
}

fn c4_certificate_discrimination() -> Outcome {
    let r = harmonic_quadratic(33, 1e-10);
    let g = r.x.grid().clone();
    let tol = PmpTolerances::uniform(10.0 * g.max_spacing().powi(2));
    let spec = LagrangianSpec::energy();
    let before = pmp_certificate(&spec, &r.x, &r.u, tol, false).unwrap();
    let bump = Field::scalar_from_fn(&g, |t| 0.01 * (PI * t[0]).sin() * (PI * t[1]).sin()).unwrap();
    let x = r.x.add(&bump).unwrap();
    let after = pmp_certificate(&spec, &x, &jacobian(&x).unwrap(), tol, false).unwrap();
    check(
        before.pass && !after.pass,
        format!(
            "converged field passes: {} (adjoint {:.1e}); perturbed passes: {} (adjoint {:.3e} > {:.3e}, failed {:?})",
            before.pass, before.adjoint_residual, after.pass, after.adjoint_residual, tol.adjoint, after.failures
        ),
    )
}

fn c5_integrability_gate() -> Outcome {
    let smooth: [fn(&[f64]) -> f64; 3] = [
        |t| (2.0 * t[0]).sin() * (3.0 * t[1]).cos(),
        |t| (t[0] * t[1]).exp(),
        |t| t[0].powi(3) * t[1] - t[1].powi(2),
    ];
    let mut worst_ratio: f64 = 0.0;
    for r in [17, 33, 65] {
        let g = unit_square(r);
        let tol = 10.0 * g.max_spacing().powi(2);
        for f in smooth {
            let u = jacobian(&Field::scalar_from_fn(&g, f).unwrap()).unwrap();
            let rep = check_closed_control(&u, tol).unwrap();
            if !rep.pass {
                return Err(format!("smooth field fails on {r}^2: residual {:e} > {tol:e}", rep.max_residual));
            }
            worst_ratio = worst_ratio.max(rep.max_residual / tol);
        }
    }
    let g = unit_square(33);
    let u = Field::from_fn(&g, Rank::Jacobian { m: 2, n: 1 }, |t, o| {
        o[0] = t[1];
        o[1] = 0.0;
    })
    .unwrap();
    let rep = check_closed_control(&u, 10.0 * g.max_spacing().powi(2)).unwrap();
    check(
        !rep.pass && (rep.max_residual - 1.0).abs() <= 0.05,
        format!(
            "smooth fields on 17^2, 33^2, 65^2 pass (worst residual/tol {worst_ratio:.2e}); (t2, 0) fails with residual {:.6}",
            rep.max_residual
        ),
    )
}

fn c6_isoperimetric_scan() -> Outcome {
    let shapes = [
        Shape::unit_sphere(),
        Shape::Ellipsoid { axes: [1.0, 1.0, 2.0] },
        Shape::Ellipsoid { axes: [1.0, 2.0, 3.0] },
        Shape::Superellipsoid {
            axes: [1.0, 1.0, 1.0],
            exponent: 4.0,
        },
    ];
    let table = isoperimetric_scan(&shapes, 4.0 * PI, 64, 128).unwrap();
    let sphere = &table.rows[0];
    let runner_up = table.rows[1..].iter().map(|r| r.volume).fold(f64::NEG_INFINITY, f64::max);
    let margin = (sphere.volume - runner_up) / sphere.volume;
    let vol_err = (sphere.volume - 4.0 * PI / 3.0).abs();
    let critical = |k: usize| {
        let s = ClosedSurface::sample(&shapes[k], table.rows[k].scale, 64, 128).unwrap();
        critical_condition_residual(&s).unwrap().residual
    };
    let (cs, ce) = (critical(0), critical(1));
    check(
        sphere.maximal && vol_err <= 1e-3 && margin > 0.01 && cs <= 1e-10 && ce >= 0.3,
        format!(
            "sphere volume {:.6} (|err| {vol_err:.1e} <= 1e-3), margin {:.2}% (> 1%), critical residual sphere {cs:.1e} (<= 1e-10), ellipsoid(1,1,2) {ce:.3} (>= 0.3)",
            sphere.volume,
            100.0 * margin
        ),
    )
}

fn c7_bang_bang() -> Outcome {
    let sys = LinearFlowSystem::desk_rotation();
    let g = unit_square(33);
    let rank = Rank::Jacobian { m: 2, n: 1 };
    let tol = 10.0 * g.max_spacing().powi(2);
    let syn = synthesize_bang_bang(&sys, &Field::zeros(&g, rank), None, tol).unwrap();
    let k = sys.k();
    let mut compared = 0;
    let mut mismatched = 0;
    for node in 0..g.node_count() {
        let brute = brute_force_h_max(&sys, &syn.costate.pq, node, 41).unwrap();
        for a in 0..k {
            if syn.switching.singular[node * k + a] {
                continue;
            }
            for alpha in 0..sys.m() {
                compared += 1;
                if brute[alpha * k + a] != syn.control.u.value(node, alpha * k + a) {
                    mismatched += 1;
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let path = corner_path(&g).unwrap();
    let mut best_constant = f64::NEG_INFINITY;
    for _ in 0..20 {
        let c: f64 = rng.random_range(-1.0..=1.0);
        let flow = integrate_flow(&sys, &Field::constant(&g, rank, &[c, c]).unwrap(), tol).unwrap();
        best_constant = best_constant.max(curvilinear_objective(&sys, &flow.z, &path).unwrap());
    }
    check(
        compared > 0 && mismatched == 0 && syn.objective > best_constant,
        format!(
            "{} of {compared} non-singular entries match brute force; objective {:.6} > best of 20 random constants {best_constant:.6}",
            compared - mismatched,
            syn.objective
        ),
    )
}

fn c8_flow_path_independence() -> Outcome {
    let (a1, a2) = (0.7, -0.4);
    let i2 = DMatrix::<f64>::identity(2, 2);
    let sys = LinearFlowSystem::new(
        vec![&i2 * a1, &i2 * a2],
        DMatrix::from_column_slice(2, 1, &[1.0, -0.5]),
        vec![1.0],
        vec![1.0, 2.0],
    )
    .unwrap();
    // u_alpha = exp(a.t) d_alpha psi with psi = sin t1 cos t2 keeps the flow integrable
    let residual = |r: usize| {
        let g = unit_square(r);
        let u = Field::from_fn(&g, Rank::Jacobian { m: 2, n: 1 }, |t, o| {
            let e = (a1 * t[0] + a2 * t[1]).exp();
            o[0] = e * t[0].cos() * t[1].cos();
            o[1] = -e * t[0].sin() * t[1].sin();
        })
        .unwrap();
        integrate_flow(&sys, &u, 10.0 * g.max_spacing().powi(2)).unwrap().path_residual
    };
    let (coarse, fine) = (residual(33), residual(65));
    let ratio = coarse / fine;
    check(
        (3.0..=5.0).contains(&ratio),
        format!("discrepancy {coarse:.3e} on 33^2, {fine:.3e} on 65^2; ratio {ratio:.3} (in [3, 5])"),
    )
}

fn c9_quadrature_orders() -> Outcome {
    let sphere = Shape::unit_sphere();
    let errs = |nt: usize, np: usize| {
        let s = ClosedSurface::sample(&sphere, 1.0, nt, np).unwrap();
        (
            (flux_volume(&s).unwrap() - 4.0 * PI / 3.0).abs(),
            (surface_area(&s) - 4.0 * PI).abs(),
        )
    };
    let (v32, a32) = errs(32, 64);
    let (v64, a64) = errs(64, 128);
    let (rv, ra) = (v32 / v64, a32 / a64);
    let mut worst_rel: f64 = 0.0;
    for (shape, exact) in [
        (Shape::unit_sphere(), 4.0 * PI / 3.0),
        (Shape::Ellipsoid { axes: [1.0, 1.0, 2.0] }, 4.0 * PI * 2.0 / 3.0),
        (Shape::Ellipsoid { axes: [1.0, 2.0, 3.0] }, 4.0 * PI * 6.0 / 3.0),
    ] {
        let s = ClosedSurface::sample(&shape, 1.0, 64, 128).unwrap();
        worst_rel = worst_rel.max((flux_volume(&s).unwrap() - exact).abs() / exact);
    }
    let near_four = |q: f64| (3.5..=4.5).contains(&q);
    check(
        near_four(rv) && near_four(ra) && worst_rel <= 1e-3,
        format!(
            "volume error ratio {rv:.3}, area error ratio {ra:.3} (in [3.5, 4.5]); worst closed-form volume error {worst_rel:.1e} (<= 1e-3)"
        ),
    )
}

fn scenarios_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

fn run_scenario(file: &Path, out: &Path) -> Result<i32, String> {
    let status = Command::new(env!("CARGO_BIN_EXE_multitime"))
        .arg("run")
        .arg(file)
        .arg("--out")
        .arg(out)
        .env("MULTITIME_LOG", "error")
        .output()
        .map_err(|e| e.to_string())?;
    status.status.code().ok_or_else(|| "terminated by signal".into())
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn c10_determinism() -> Outcome {
    let mut files: Vec<PathBuf> = fs::read_dir(scenarios_dir())
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err("no shipped scenarios".into());
    }
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut artifacts = 0;
    for file in &files {
        let name = file.file_stem().unwrap().to_string_lossy().into_owned();
        let (a, b) = (tmp.path().join(format!("{name}-a")), tmp.path().join(format!("{name}-b")));
        let (ca, cb) = (run_scenario(file, &a)?, run_scenario(file, &b)?);
        if ca != cb || ca == 1 {
            return Err(format!("{name}: exit codes {ca} and {cb}"));
        }
        let (ta, tb) = (read_tree(&a), read_tree(&b));
        if ta != tb {
            return Err(format!("{name}: outputs differ between runs"));
        }
        let manifest: serde_json::Value =
            serde_json::from_slice(&ta.iter().find(|(n, _)| n == "manifest.json").ok_or("no manifest")?.1)
                .map_err(|e| e.to_string())?;
        for entry in manifest["artifacts"].as_array().ok_or("manifest without artifacts")? {
            let path = entry["path"].as_str().unwrap_or_default();
            let bytes = fs::read(a.join(path)).map_err(|e| format!("{name}/{path}: {e}"))?;
            if hex::encode(Sha256::digest(&bytes)) != entry["sha256"].as_str().unwrap_or_default() {
                return Err(format!("{name}/{path}: hash does not match the manifest"));
            }
        }
        artifacts += ta.len();
    }
    Ok(format!(
        "{} scenarios, {artifacts} files per run byte-identical across two runs, manifest hashes verified",
        files.len()
    ))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("harmonic solver exactness", c1_harmonic_exactness),
        ("minimal-graph convergence order", c2_minimal_graph_order),
        ("maximum-principle self-consistency identity", c3_pmp_identity),
        ("certificate discrimination", c4_certificate_discrimination),
        ("integrability gate", c5_integrability_gate),
        ("isoperimetric scan", c6_isoperimetric_scan),
        ("bang-bang equals brute force", c7_bang_bang),
        ("flow path-independence", c8_flow_path_independence),
        ("quadrature orders", c9_quadrature_orders),
        ("determinism", c10_determinism),
    ];
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("[PASS] {:>2} {name}: {detail} [{secs:.2} s]", k + 1),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {:>2} {name}: {detail} [{secs:.2} s]", k + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
