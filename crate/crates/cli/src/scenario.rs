//! Scenario files: TOML schema, overrides and validation.
//!
//! Every expression is compiled and every referenced file checked here, so
//! a scenario that loads cannot fail on bad input halfway through a run.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use multitime::bangbang::LinearFlowSystem;
use multitime::expr::Expr;
use multitime::isoperimetric::Shape;
use multitime::mtgrid::{Field, Grid, Rank};
use multitime::solvers::SolveOptions;
use multitime::variational::{DomainMetric, LagrangianSpec, TargetMetric};
use nalgebra::DMatrix;
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    MinimalGraph,
    Harmonic,
    PmpCheck,
    IsoperimetricScan,
    Bangbang,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::MinimalGraph => "minimal_graph",
            Kind::Harmonic => "harmonic",
            Kind::PmpCheck => "pmp_check",
            Kind::IsoperimetricScan => "isoperimetric_scan",
            Kind::Bangbang => "bangbang",
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    kind: Kind,
    output: Option<PathBuf>,
    tolerance: Option<f64>,
    grid: Option<GridBlock>,
    solver: Option<SolverBlock>,
    harmonic: Option<HarmonicBlock>,
    minimal_graph: Option<MinimalBlock>,
    pmp_check: Option<PmpBlock>,
    isoperimetric_scan: Option<IsoBlock>,
    bangbang: Option<BangBlock>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridBlock {
    extents: Vec<f64>,
    resolution: Vec<usize>,
    origin: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SolverBlock {
    max_iterations: Option<usize>,
    relaxation_factor: Option<f64>,
    step_size: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct HarmonicBlock {
    boundary: Vec<String>,
    domain_metric: Option<Vec<Vec<f64>>>,
    target_metric: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MinimalBlock {
    boundary: String,
    exact: Option<String>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
enum LagrangianName {
    Energy,
    Area,
    GraphArea,
    Custom,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
enum SolveFirst {
    Harmonic,
    MinimalGraph,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PmpBlock {
    lagrangian: LagrangianName,
    custom: Option<String>,
    solve: Option<SolveFirst>,
    state: Option<Vec<String>>,
    state_file: Option<PathBuf>,
    components: Option<usize>,
    perturbation: Option<Vec<String>>,
    #[serde(default)]
    check_boundary: bool,
    require_concavity: Option<bool>,
    domain_metric: Option<Vec<Vec<f64>>>,
    target_metric: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct IsoBlock {
    reference_area: Option<f64>,
    chart: Option<[usize; 2]>,
    shapes: Vec<Shape>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BangBlock {
    a: Vec<Vec<Vec<f64>>>,
    b: Vec<Vec<f64>>,
    metric: Option<Vec<f64>>,
    z0: Vec<f64>,
    epsilon: Option<f64>,
    reference_control: Option<Vec<String>>,
    fixed_point_iterations: Option<usize>,
    compare_constants: Option<Vec<f64>>,
}

/// Command-line values that take precedence over file keys.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub tolerance: Option<f64>,
    pub resolution: Option<Vec<usize>>,
}

/// Compiled expressions for the components of a field over `t1..tm`.
#[derive(Debug, Clone)]
pub struct FieldExpr {
    exprs: Vec<Expr>,
}

impl FieldExpr {
    fn parse(sources: &[String], m: usize, what: &str) -> Result<Self> {
        if sources.is_empty() {
            bail!("{what}: need at least one expression");
        }
        let names: Vec<String> = (1..=m).map(|a| format!("t{a}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let exprs = sources
            .iter()
            .map(|s| Expr::parse(s, &refs).with_context(|| format!("{what}: cannot parse `{s}`")))
            .collect::<Result<_>>()?;
        Ok(Self { exprs })
    }

    pub fn len(&self) -> usize {
        self.exprs.len()
    }

    /// Samples at every node; one expression gives a scalar field.
    pub fn sample(&self, grid: &Grid) -> Result<Field> {
        let rank = if self.exprs.len() == 1 {
            Rank::Scalar
        } else {
            Rank::Vector(self.exprs.len())
        };
        self.sample_as(grid, rank)
    }

    pub fn sample_as(&self, grid: &Grid, rank: Rank) -> Result<Field> {
        if rank.components() != self.exprs.len() {
            bail!("{} expressions for a {rank} field", self.exprs.len());
        }
        Ok(Field::from_fn(grid, rank, |t, out| {
            for (o, e) in out.iter_mut().zip(&self.exprs) {
                *o = e.eval(t);
            }
        })?)
    }
}

#[derive(Debug)]
pub enum StateSource {
    Expression(FieldExpr),
    Harmonic(FieldExpr),
    MinimalGraph(FieldExpr),
    File { path: PathBuf, components: usize },
}

#[derive(Debug)]
#[allow(clippy::large_enum_variant)]
pub enum Problem {
    Harmonic {
        boundary: FieldExpr,
        h: DomainMetric,
        g: TargetMetric,
    },
    MinimalGraph {
        boundary: FieldExpr,
        exact: Option<FieldExpr>,
    },
    PmpCheck {
        spec: LagrangianSpec,
        h: DomainMetric,
        g: TargetMetric,
        state: StateSource,
        perturbation: Option<FieldExpr>,
        check_boundary: bool,
        require_concavity: bool,
    },
    IsoperimetricScan {
        reference_area: f64,
        chart: [usize; 2],
        shapes: Vec<Shape>,
    },
    Bangbang {
        system: LinearFlowSystem,
        epsilon: Option<f64>,
        reference: Option<FieldExpr>,
        fixed_point_iterations: usize,
        compare_constants: Vec<f64>,
    },
}

#[derive(Debug)]
pub struct Scenario {
    pub kind: Kind,
    pub name: String,
    pub output: PathBuf,
    pub tolerance: Option<f64>,
    pub grid: Option<Grid>,
    pub solver: SolveOptions,
    pub problem: Problem,
}

impl Scenario {
    pub fn grid(&self) -> Result<&Grid> {
        self.grid
            .as_ref()
            .ok_or_else(|| anyhow!("{} scenario needs a [grid] block", self.kind.name()))
    }

    /// Scenario tolerance, or `10 max(h)^2` when none is given.
    pub fn tolerance_or_default(&self) -> Result<f64> {
        match self.tolerance {
            Some(t) => Ok(t),
            None => Ok(10.0 * self.grid()?.max_spacing().powi(2)),
        }
    }
}

fn metric_matrix(rows: &[Vec<f64>], m: usize) -> Result<DomainMetric> {
    if rows.len() != m || rows.iter().any(|r| r.len() != m) {
        bail!("domain_metric must be a {m}x{m} matrix");
    }
    Ok(DomainMetric::Constant(rows.concat()))
}

fn metrics(h: Option<&Vec<Vec<f64>>>, g: Option<&Vec<f64>>, m: usize) -> Result<(DomainMetric, TargetMetric)> {
    let h = match h {
        Some(rows) => metric_matrix(rows, m)?,
        None => DomainMetric::Identity,
    };
    let g = match g {
        Some(d) => {
            if d.iter().any(|v| !(*v > 0.0)) {
                bail!("target_metric entries must be positive");
            }
            TargetMetric::Diagonal(d.clone())
        }
        None => TargetMetric::Identity,
    };
    Ok((h, g))
}

fn matrix(rows: &[Vec<f64>], name: &str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        bail!("matrix {name} must be a non-empty rectangular array of rows");
    }
    Ok(DMatrix::from_row_slice(r, c, &rows.concat()))
}

/// Reads, overrides and validates a scenario file.
pub fn load(path: &Path, overrides: &Overrides) -> Result<Scenario> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let file: ScenarioFile = toml::from_str(&text).with_context(|| format!("invalid scenario {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scenario".into());

    let present = [
        (Kind::Harmonic, file.harmonic.is_some()),
        (Kind::MinimalGraph, file.minimal_graph.is_some()),
        (Kind::PmpCheck, file.pmp_check.is_some()),
        (Kind::IsoperimetricScan, file.isoperimetric_scan.is_some()),
        (Kind::Bangbang, file.bangbang.is_some()),
    ];
    for (kind, there) in present {
        if there && kind != file.kind {
            bail!("block [{}] does not belong to a {} scenario", kind.name(), file.kind.name());
        }
        if !there && kind == file.kind {
            bail!("{} scenario needs a [{}] block", kind.name(), kind.name());
        }
    }

    let tolerance = overrides.tolerance.or(file.tolerance);
    if let Some(t) = tolerance {
        if !(t > 0.0 && t.is_finite()) {
            bail!("tolerance must be positive, got {t}");
        }
    }
    let output = overrides
        .out
        .clone()
        .or_else(|| file.output.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(&name));

    let mut iso_chart_override = None;
    let grid = match &file.grid {
        Some(g) => {
            let resolution = overrides.resolution.clone().unwrap_or_else(|| g.resolution.clone());
            if resolution.len() != g.extents.len() {
                bail!(
                    "resolution has {} entries but the grid has {} axes",
                    resolution.len(),
                    g.extents.len()
                );
            }
            let origin = g.origin.clone().unwrap_or_else(|| vec![0.0; g.extents.len()]);
            Some(Grid::with_origin(&origin, &g.extents, &resolution)?)
        }
        None => {
            if let Some(r) = &overrides.resolution {
                if file.kind != Kind::IsoperimetricScan {
                    bail!("--resolution given but the scenario has no [grid] block");
                }
                match r.as_slice() {
                    &[a, b] => iso_chart_override = Some([a, b]),
                    _ => bail!("--resolution for an isoperimetric scan takes two values (latitude, longitude)"),
                }
            }
            None
        }
    };
    let needs_grid = file.kind != Kind::IsoperimetricScan;
    let m = match (&grid, needs_grid) {
        (Some(g), _) => g.dim(),
        (None, true) => bail!("{} scenario needs a [grid] block", file.kind.name()),
        (None, false) => 0,
    };

    let sb = file.solver.unwrap_or_default();
    let mut solver = SolveOptions::default();
    if let Some(v) = sb.max_iterations {
        solver.max_iterations = v;
    }
    solver.relaxation_factor = sb.relaxation_factor;
    if let Some(v) = sb.step_size {
        solver.step_size = v;
    }
    if let Some(t) = tolerance {
        solver.tolerance = t;
    }
    solver.validate()?;

    let problem = match file.kind {
        Kind::Harmonic => {
            let b = file.harmonic.expect("checked above");
            let (h, g) = metrics(b.domain_metric.as_ref(), b.target_metric.as_ref(), m)?;
            Problem::Harmonic {
                boundary: FieldExpr::parse(&b.boundary, m, "harmonic.boundary")?,
                h,
                g,
            }
        }
        Kind::MinimalGraph => {
            let b = file.minimal_graph.expect("checked above");
            if m != 2 {
                bail!("minimal_graph needs a two-dimensional grid");
            }
            Problem::MinimalGraph {
                boundary: FieldExpr::parse(std::slice::from_ref(&b.boundary), m, "minimal_graph.boundary")?,
                exact: b
                    .exact
                    .map(|e| FieldExpr::parse(&[e], m, "minimal_graph.exact"))
                    .transpose()?,
            }
        }
        Kind::PmpCheck => pmp_problem(file.pmp_check.expect("checked above"), m, base)?,
        Kind::IsoperimetricScan => {
            let b = file.isoperimetric_scan.expect("checked above");
            if b.shapes.is_empty() {
                bail!("isoperimetric_scan.shapes is empty");
            }
            for s in &b.shapes {
                s.validate()?;
            }
            let reference_area = b.reference_area.unwrap_or(4.0 * PI);
            if !(reference_area > 0.0) {
                bail!("reference_area must be positive");
            }
            Problem::IsoperimetricScan {
                reference_area,
                chart: iso_chart_override.or(b.chart).unwrap_or([64, 128]),
                shapes: b.shapes,
            }
        }
        Kind::Bangbang => {
            let b = file.bangbang.expect("checked above");
            let a = b
                .a
                .iter()
                .enumerate()
                .map(|(i, rows)| matrix(rows, &format!("A{}", i + 1)))
                .collect::<Result<Vec<_>>>()?;
            let bm = matrix(&b.b, "B")?;
            let n = bm.nrows() / 2;
            let metric = b.metric.clone().unwrap_or_else(|| vec![1.0; n.max(1)]);
            let system = LinearFlowSystem::new(a, bm, metric, b.z0.clone())?;
            if system.m() != m {
                bail!("{} coefficient matrices for a {m}-dimensional grid", system.m());
            }
            let reference = match &b.reference_control {
                Some(src) => {
                    let f = FieldExpr::parse(src, m, "bangbang.reference_control")?;
                    if f.len() != m * system.k() {
                        bail!("reference_control needs {} expressions (axis-major)", m * system.k());
                    }
                    Some(f)
                }
                None => None,
            };
            let constants = b.compare_constants.clone().unwrap_or_default();
            if constants.iter().any(|c| !(-1.0..=1.0).contains(c)) {
                bail!("compare_constants must lie in [-1, 1]");
            }
            let iterations = b.fixed_point_iterations.unwrap_or(1);
            if iterations == 0 {
                bail!("fixed_point_iterations must be at least 1");
            }
            if let Some(e) = b.epsilon {
                if !(e >= 0.0) {
                    bail!("epsilon must be nonnegative");
                }
            }
            Problem::Bangbang {
                system,
                epsilon: b.epsilon,
                reference,
                fixed_point_iterations: iterations,
                compare_constants: constants,
            }
        }
    };

    Ok(Scenario {
        kind: file.kind,
        name,
        output,
        tolerance,
        grid,
        solver,
        problem,
    })
}

fn pmp_problem(b: PmpBlock, m: usize, base: &Path) -> Result<Problem> {
    let (h, g) = metrics(b.domain_metric.as_ref(), b.target_metric.as_ref(), m)?;
    let state = match (&b.state, &b.state_file, b.solve) {
        (_, Some(_), Some(_)) => bail!("pmp_check: `solve` and `state_file` are exclusive"),
        (Some(_), Some(_), _) => bail!("pmp_check: `state` and `state_file` are exclusive"),
        (None, None, _) => bail!("pmp_check needs `state` expressions or a `state_file`"),
        (None, Some(file), None) => {
            let path = base.join(file);
            if !path.is_file() {
                bail!("state_file {} does not exist", path.display());
            }
            StateSource::File {
                path,
                components: b.components.unwrap_or(1),
            }
        }
        (Some(src), None, solve) => {
            let f = FieldExpr::parse(src, m, "pmp_check.state")?;
            match solve {
                None => StateSource::Expression(f),
                Some(SolveFirst::Harmonic) => StateSource::Harmonic(f),
                Some(SolveFirst::MinimalGraph) => {
                    if f.len() != 1 || m != 2 {
                        bail!("pmp_check: minimal_graph needs one boundary expression on a 2-d grid");
                    }
                    StateSource::MinimalGraph(f)
                }
            }
        }
    };
    let n = match &state {
        StateSource::Expression(f) | StateSource::Harmonic(f) | StateSource::MinimalGraph(f) => f.len(),
        StateSource::File { components, .. } => *components,
    };
    let spec = match b.lagrangian {
        LagrangianName::Energy => LagrangianSpec::energy(),
        LagrangianName::Area => LagrangianSpec::area(),
        LagrangianName::GraphArea => LagrangianSpec::graph_area(),
        LagrangianName::Custom => {
            let src = b.custom.as_deref().context("pmp_check: lagrangian = \"custom\" needs `custom`")?;
            LagrangianSpec::custom(src, m, n)?
        }
    };
    if b.custom.is_some() && !matches!(b.lagrangian, LagrangianName::Custom) {
        bail!("pmp_check: `custom` is only read when lagrangian = \"custom\"");
    }
    let spec = spec.with_domain_metric(h.clone()).with_target_metric(g.clone());
    spec.validate(m, n)?;
    let perturbation = match &b.perturbation {
        Some(src) => {
            let f = FieldExpr::parse(src, m, "pmp_check.perturbation")?;
            if f.len() != n {
                bail!("perturbation has {} components, state has {n}", f.len());
            }
            Some(f)
        }
        None => None,
    };
    Ok(Problem::PmpCheck {
        spec,
        h,
        g,
        state,
        perturbation,
        check_boundary: b.check_boundary,
        require_concavity: b.require_concavity.unwrap_or(true),
    })
}
