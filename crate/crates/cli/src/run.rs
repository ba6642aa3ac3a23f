//! Executes a loaded scenario and writes its exports.

use std::fs::File;
use std::io::BufReader;

use anyhow::{Context, Result};
use log::{info, warn};
use multitime::bangbang::{corner_path, curvilinear_objective, fixed_point_synthesis, integrate_flow};
use multitime::isoperimetric::{critical_condition_residual, isoperimetric_scan, ClosedSurface, Shape};
use multitime::mtgrid::{jacobian, Field, Grid, Rank};
use multitime::solvers::{graph_sheet, solve_harmonic, solve_minimal_graph, SolveResult};
use multitime::variational::{pmp_certificate, LagrangianSpec, PmpReport, PmpTolerances};
use serde_json::{json, Value};

use crate::artifacts::Artifacts;
use crate::scenario::{Problem, Scenario, StateSource};

/// Reasons a run did not pass; empty means exit 0.
pub type Failures = Vec<String>;

pub fn run(s: &Scenario, art: &mut Artifacts) -> Result<Failures> {
    match &s.problem {
        Problem::Harmonic { boundary, h, g } => {
            let grid = s.grid()?;
            let b = boundary.sample(grid)?;
            let r = solve_harmonic(grid, &b, h, g, &s.solver)?;
            let spec = LagrangianSpec::energy()
                .with_domain_metric(h.clone())
                .with_target_metric(g.clone());
            solved_with_certificate(grid, &r, &spec, art)
        }
        Problem::MinimalGraph { boundary, exact } => {
            let grid = s.grid()?;
            let b = boundary.sample(grid)?;
            let r = solve_minimal_graph(grid, &b, &s.solver)?;
            let sheet = graph_sheet(&r.x)?;
            art.write_with("sheet.csv", |w| sheet.write_csv(w))?;
            if let Some(e) = exact {
                let err = r.x.sub(&e.sample(grid)?)?.sup_norm();
                info!("sup error against the exact surface: {err:e}");
                art.write_json("error.json", &json!({ "sup_error": err, "max_spacing": grid.max_spacing() }))?;
            }
            solved_with_certificate(grid, &r, &LagrangianSpec::graph_area(), art)
        }
        Problem::PmpCheck {
            spec,
            h,
            g,
            state,
            perturbation,
            check_boundary,
            require_concavity,
        } => {
            let grid = s.grid()?;
            let mut failures = Failures::new();
            let mut x = match state {
                StateSource::Expression(f) => f.sample(grid)?,
                StateSource::Harmonic(f) => {
                    let r = solve_harmonic(grid, &f.sample(grid)?, h, g, &s.solver)?;
                    art.write_json("solve.json", &r.to_json())?;
                    note_convergence(&r, &mut failures);
                    r.x
                }
                StateSource::MinimalGraph(f) => {
                    let r = solve_minimal_graph(grid, &f.sample(grid)?, &s.solver)?;
                    art.write_json("solve.json", &r.to_json())?;
                    note_convergence(&r, &mut failures);
                    r.x
                }
                StateSource::File { path, components } => {
                    let rank = if *components == 1 {
                        Rank::Scalar
                    } else {
                        Rank::Vector(*components)
                    };
                    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
                    Field::read_csv(grid, rank, BufReader::new(file))
                        .with_context(|| format!("cannot read state from {}", path.display()))?
                }
            };
            if let Some(p) = perturbation {
                x = x.add(&p.sample_as(grid, x.rank())?)?;
            }
            let u = jacobian(&x)?;
            let mut tol = PmpTolerances::uniform(s.tolerance_or_default()?);
            tol.require_concavity = *require_concavity;
            let report = pmp_certificate(spec, &x, &u, tol, *check_boundary)?;
            art.write_with("state.csv", |w| x.write_csv(w))?;
            write_certificate(&report, art)?;
            note_certificate(&report, &mut failures);
            Ok(failures)
        }
        Problem::IsoperimetricScan {
            reference_area,
            chart,
            shapes,
        } => run_scan(shapes, *reference_area, *chart, art),
        Problem::Bangbang {
            system,
            epsilon,
            reference,
            fixed_point_iterations,
            compare_constants,
        } => {
            let grid = s.grid()?;
            let rank = Rank::Jacobian {
                m: system.m(),
                n: system.k(),
            };
            let u0 = match reference {
                Some(f) => f.sample_as(grid, rank)?,
                None => Field::zeros(grid, rank),
            };
            let tol = s.tolerance_or_default()?;
            let syn = fixed_point_synthesis(system, &u0, *epsilon, tol, *fixed_point_iterations)?;
            art.write_with("state.csv", |w| syn.flow.z.write_csv(w))?;
            art.write_with("costate.csv", |w| syn.costate.pq.write_csv(w))?;
            art.write_with("switching.csv", |w| syn.switching.write_csv(w))?;
            art.write_with("control.csv", |w| syn.control.u.write_csv(w))?;

            let path = corner_path(grid)?;
            let mut constants = Vec::with_capacity(compare_constants.len());
            let mut failures = Failures::new();
            for &c in compare_constants {
                let u = Field::constant(grid, rank, &vec![c; rank.components()])?;
                let flow = integrate_flow(system, &u, tol)?;
                let objective = curvilinear_objective(system, &flow.z, &path)?;
                if !(syn.objective > objective) {
                    failures.push(format!(
                        "constant control {c} reaches {objective:.6e}, bang-bang only {:.6e}",
                        syn.objective
                    ));
                }
                constants.push(json!({ "value": c, "objective": objective }));
            }
            // a switching line makes the mixed differences O(jump / h) there
            if !syn.flow.integrable {
                warn!(
                    "synthesized control fails the discrete integrability check (residual {:e})",
                    syn.flow.integrability_residual
                );
            }
            let summary = syn.summary();
            info!(
                "bang-bang objective {:.6e}, singular fraction {:.3}",
                summary.objective, summary.singular_fraction
            );
            let mut v = serde_json::to_value(&summary)?;
            v["epsilon"] = json!(syn.switching.epsilon);
            v["constants"] = Value::Array(constants);
            art.write_json("summary.json", &v)?;
            Ok(failures)
        }
    }
}

fn solved_with_certificate(grid: &Grid, r: &SolveResult, spec: &LagrangianSpec, art: &mut Artifacts) -> Result<Failures> {
    let mut failures = Failures::new();
    art.write_with("field.csv", |w| r.write_field_csv(w))?;
    art.write_json("solve.json", &r.to_json())?;
    note_convergence(r, &mut failures);
    let tol = PmpTolerances::uniform(10.0 * grid.max_spacing().powi(2));
    let report = pmp_certificate(spec, &r.x, &r.u, tol, false)?;
    write_certificate(&report, art)?;
    note_certificate(&report, &mut failures);
    Ok(failures)
}

fn note_convergence(r: &SolveResult, failures: &mut Failures) {
    info!(
        "solver: {} iterations, residual {:e}, converged {}",
        r.iterations, r.final_residual, r.converged
    );
    if !r.converged {
        failures.push(format!(
            "solver did not converge (residual {:e} after {} iterations)",
            r.final_residual, r.iterations
        ));
    }
}

fn write_certificate(report: &PmpReport, art: &mut Artifacts) -> Result<()> {
    art.write_with("el.csv", |w| report.el_field.write_csv(w))?;
    art.write_with("costate.csv", |w| report.costate.write_csv(w))?;
    art.write_json("pmp.json", &report.to_json())
}

fn note_certificate(report: &PmpReport, failures: &mut Failures) {
    if !report.pass {
        failures.push(format!("certificate failed: {}", report.failures.join(", ")));
    }
}

fn run_scan(shapes: &[Shape], reference_area: f64, chart: [usize; 2], art: &mut Artifacts) -> Result<Failures> {
    let [n_theta, n_phi] = chart;
    let table = isoperimetric_scan(shapes, reference_area, n_theta, n_phi)?;
    art.write_with("scan.csv", |w| table.write_csv(w))?;

    let mut critical = Vec::with_capacity(shapes.len());
    for (shape, row) in shapes.iter().zip(&table.rows) {
        let surface = ClosedSurface::sample(shape, row.scale, n_theta, n_phi)?;
        let c = critical_condition_residual(&surface)?;
        critical.push(json!({ "shape": row.shape, "p_fit": c.p_fit, "residual": c.residual }));
    }
    art.write_json("critical.json", &Value::Array(critical))?;

    let best = table.maximal().context("empty scan")?;
    let runner_up = table
        .rows
        .iter()
        .filter(|r| !r.maximal)
        .map(|r| r.volume)
        .fold(f64::NEG_INFINITY, f64::max);
    let margin = if runner_up.is_finite() {
        Some((best.volume - runner_up) / best.volume)
    } else {
        None
    };
    let mut v = table.to_json();
    v["chart"] = json!(chart);
    v["margin"] = json!(margin);
    art.write_json("scan.json", &v)?;
    info!("maximal volume {:.12} for {}", best.volume, best.shape);

    let has_sphere = shapes.iter().any(|s| matches!(s, Shape::Sphere { .. }));
    let best_is_sphere = shapes
        .iter()
        .zip(&table.rows)
        .any(|(s, r)| r.maximal && matches!(s, Shape::Sphere { .. }));
    let mut failures = Failures::new();
    if has_sphere && !best_is_sphere {
        failures.push(format!("{} encloses more volume than every sphere", best.shape));
    }
    Ok(failures)
}
