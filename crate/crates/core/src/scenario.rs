//! Scenario files (JSON, schema version `v1`), orchestration of all checks
//! for one scenario, and the report and CSV artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::comparison::{
    check, sweep_function_class, CheckOptions, ClassReport, ComparisonReport, Direction, Theorem, Verdict,
    CONDITION_TOL, SUPPORT_EPS,
};
use crate::evolution::{
    build_evolution, check_backward_equation, check_integral_representation, EvolutionSystem, StochasticityReport,
    TimeGrid, BLOCK_TOL,
};
use crate::generators::estimate_generator;
use crate::montecarlo::{
    empirical_mean, linking_supermartingale_test, martingale_test, simulate, LinkingTestResult,
    MartingaleTestResult, TestKind, CSV_HEADER, DEFAULT_PATHS, DEFAULT_Z_MAX,
};
use crate::rates::{validate, JumpSchedule, ProcessSpec, RateModel, Severity, Side};
use crate::state::{upset_generators, FunctionCone, PartialOrder, StateSpace, TestFunction};
use crate::{Error, Matrix, Result, Vector};

/// JSON Schema of scenario files.
pub const SCHEMA: &str = include_str!("../schema/scenario.v1.json");
pub const SCHEMA_VERSION: &str = "v1";
pub const DEFAULT_STEPS: usize = 256;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INCONCLUSIVE: i32 = 1;
pub const EXIT_SOUNDNESS: i32 = 2;
pub const EXIT_INVALID: i32 = 3;

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioDoc {
    version: String,
    #[serde(default)]
    name: Option<String>,
    states: StatesDoc,
    horizon: f64,
    #[serde(rename = "specX")]
    spec_x: SpecDoc,
    #[serde(rename = "specY")]
    spec_y: SpecDoc,
    #[serde(default)]
    functions: Vec<FunctionDoc>,
    #[serde(default)]
    cone: Option<ConeDoc>,
    #[serde(default)]
    grid: Option<GridDoc>,
    times: Vec<f64>,
    theorems: Vec<Theorem>,
    #[serde(default)]
    direction: Direction,
    #[serde(default)]
    montecarlo: Option<MonteCarloDoc>,
    #[serde(default)]
    tolerances: Option<TolerancesDoc>,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    output: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StatesDoc {
    n: usize,
    #[serde(default)]
    labels: Option<Vec<String>>,
    #[serde(default)]
    order: Option<OrderDoc>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum OrderDoc {
    Named(String),
    Pairs(Vec<[usize; 2]>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecDoc {
    rates: RatesDoc,
    #[serde(default)]
    jumps: Option<JumpsDoc>,
    initial: InitialDoc,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum RatesDoc {
    Constant { q: Rows },
    Piecewise { breakpoints: Vec<f64>, pieces: Vec<Rows> },
    Affine { base: Rows, slope: Rows },
    Sampled { times: Vec<f64>, matrices: Vec<Rows> },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct JumpsDoc {
    times: Vec<f64>,
    kernels: Vec<Rows>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum InitialDoc {
    State(usize),
    Law(Vec<f64>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FunctionDoc {
    #[serde(default)]
    name: Option<String>,
    values: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum ConeDoc {
    Increasing,
    AllBounded,
    Custom { generators: Vec<FunctionDoc> },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridDoc {
    steps: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MonteCarloDoc {
    #[serde(default)]
    paths: Option<usize>,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    checkpoints: Option<Vec<f64>>,
    #[serde(default)]
    z_max: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TolerancesDoc {
    #[serde(default)]
    condition: Option<f64>,
    #[serde(default)]
    support: Option<f64>,
    #[serde(default)]
    block: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloSettings {
    pub paths: usize,
    pub seed: u64,
    pub checkpoints: Vec<f64>,
    pub z_max: f64,
}

/// A validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub space: StateSpace,
    pub x: ProcessSpec,
    pub y: ProcessSpec,
    pub functions: Vec<TestFunction>,
    pub cone: Option<FunctionCone>,
    pub steps: usize,
    pub times: Vec<f64>,
    pub theorems: Vec<Theorem>,
    pub options: CheckOptions,
    pub block_tol: f64,
    pub montecarlo: Option<MonteCarloSettings>,
    pub output: Option<PathBuf>,
}

/// Command-line overrides of scenario settings.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub grid_steps: Option<usize>,
    pub paths: Option<usize>,
    pub seed: Option<u64>,
}

impl Scenario {
    pub fn apply(&mut self, ov: &Overrides) -> Result<()> {
        if let Some(out) = &ov.out {
            self.output = Some(out.clone());
        }
        if let Some(m) = ov.grid_steps {
            if m == 0 {
                return Err(schema("/grid/steps", "grid needs at least one step"));
            }
            self.steps = m;
        }
        if let Some(mc) = self.montecarlo.as_mut() {
            if let Some(p) = ov.paths {
                mc.paths = p;
            }
            if let Some(s) = ov.seed {
                mc.seed = s;
            }
        }
        Ok(())
    }
}

fn schema(pointer: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Schema { pointer: pointer.into(), message: message.into() }
}

fn pointer_of(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => write!(out, "/{index}").expect("string write"),
            Segment::Map { key } => write!(out, "/{}", key.replace('~', "~0").replace('/', "~1")).expect("string write"),
            Segment::Enum { variant } => write!(out, "/{variant}").expect("string write"),
            Segment::Unknown => {}
        }
    }
    out
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = fs::read_to_string(path)?;
    parse_scenario(&text)
}

/// Parses and validates a scenario; every error carries a JSON pointer.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let doc: ScenarioDoc = serde_path_to_error::deserialize(de).map_err(|e| {
        let pointer = pointer_of(e.path());
        schema(if pointer.is_empty() { "/".to_string() } else { pointer }, e.inner().to_string())
    })?;
    build_scenario(doc)
}

fn build_scenario(doc: ScenarioDoc) -> Result<Scenario> {
    if doc.version != SCHEMA_VERSION {
        return Err(schema("/version", format!("unsupported version {:?}, expected \"v1\"", doc.version)));
    }
    let n = doc.states.n;
    if n == 0 {
        return Err(schema("/states/n", "state space is empty"));
    }
    if !(doc.horizon.is_finite() && doc.horizon > 0.0) {
        return Err(schema("/horizon", "horizon must be positive"));
    }
    let order = match &doc.states.order {
        None => None,
        Some(OrderDoc::Named(s)) if s == "total" => Some(PartialOrder::total(n)),
        Some(OrderDoc::Named(s)) if s == "none" => Some(PartialOrder::antichain(n)),
        Some(OrderDoc::Named(s)) => {
            return Err(schema("/states/order", format!("unknown order {s:?} (use \"total\", \"none\" or pairs)")))
        }
        Some(OrderDoc::Pairs(p)) => {
            let pairs: Vec<(usize, usize)> = p.iter().map(|&[i, j]| (i, j)).collect();
            Some(PartialOrder::from_pairs(n, &pairs).map_err(|e| schema("/states/order", e.to_string()))?)
        }
    };
    let space = StateSpace::new(n, doc.states.labels.clone(), order).map_err(|e| schema("/states", e.to_string()))?;

    let x = build_spec(&doc.spec_x, n, doc.horizon, "/specX")?;
    let y = build_spec(&doc.spec_y, n, doc.horizon, "/specY")?;

    let mut functions = Vec::new();
    for (i, f) in doc.functions.iter().enumerate() {
        functions.push(build_function(f, n, &format!("/functions/{i}"))?);
    }
    let cone = match &doc.cone {
        None => None,
        Some(ConeDoc::Increasing) => {
            Some(upset_generators(&space).map_err(|e| schema("/cone", e.to_string()))?)
        }
        Some(ConeDoc::AllBounded) => Some(FunctionCone::all_bounded(n)),
        Some(ConeDoc::Custom { generators }) => {
            let gens = generators
                .iter()
                .enumerate()
                .map(|(i, g)| build_function(g, n, &format!("/cone/generators/{i}")))
                .collect::<Result<Vec<_>>>()?;
            Some(FunctionCone::custom(gens).map_err(|e| schema("/cone/generators", e.to_string()))?)
        }
    };
    if functions.is_empty() && cone.is_none() {
        return Err(schema("/functions", "give at least one function or a cone"));
    }
    if doc.theorems.is_empty() {
        return Err(schema("/theorems", "theorem list is empty"));
    }
    if doc.times.is_empty() {
        return Err(schema("/times", "no comparison times"));
    }
    for (i, &t) in doc.times.iter().enumerate() {
        if !(t > 0.0 && t <= doc.horizon) {
            return Err(schema(format!("/times/{i}"), format!("time {t} outside (0, {}]", doc.horizon)));
        }
    }
    if doc.theorems.contains(&Theorem::Theorem10) {
        let k = doc.theorems.iter().position(|&t| t == Theorem::Theorem10).expect("present");
        if x.epochs() != y.epochs() {
            return Err(schema(format!("/theorems/{k}"), "theorem10 needs identical jump epochs in specX and specY"));
        }
        if x.initial != y.initial {
            return Err(schema(format!("/theorems/{k}"), "theorem10 needs identical initial laws"));
        }
    }
    let steps = doc.grid.as_ref().map_or(DEFAULT_STEPS, |g| g.steps);
    if steps == 0 {
        return Err(schema("/grid/steps", "grid needs at least one step"));
    }
    let tol = doc.tolerances.unwrap_or_default();
    let positive = |v: Option<f64>, default: f64, ptr: &str| -> Result<f64> {
        match v {
            None => Ok(default),
            Some(v) if v.is_finite() && v > 0.0 => Ok(v),
            Some(v) => Err(schema(ptr, format!("tolerance {v} must be positive"))),
        }
    };
    let options = CheckOptions {
        tol: positive(tol.condition, CONDITION_TOL, "/tolerances/condition")?,
        support_eps: positive(tol.support, SUPPORT_EPS, "/tolerances/support")?,
        direction: doc.direction,
        fault: None,
    };
    let block_tol = positive(tol.block, BLOCK_TOL, "/tolerances/block")?;

    let montecarlo = match &doc.montecarlo {
        None => None,
        Some(mc) => {
            let checkpoints = mc
                .checkpoints
                .clone()
                .unwrap_or_else(|| (1..=4).map(|k| doc.horizon * k as f64 / 4.0).collect());
            for (i, &c) in checkpoints.iter().enumerate() {
                if !(0.0..=doc.horizon).contains(&c) {
                    return Err(schema(format!("/montecarlo/checkpoints/{i}"), format!("checkpoint {c} outside [0, T]")));
                }
            }
            let z_max = mc.z_max.unwrap_or(DEFAULT_Z_MAX);
            if !(z_max.is_finite() && z_max > 0.0) {
                return Err(schema("/montecarlo/z_max", "z_max must be positive"));
            }
            Some(MonteCarloSettings {
                paths: mc.paths.unwrap_or(DEFAULT_PATHS),
                seed: mc.seed.or(doc.seed).unwrap_or(0),
                checkpoints,
                z_max,
            })
        }
    };

    Ok(Scenario {
        name: doc.name.clone().unwrap_or_else(|| "scenario".into()),
        space,
        x,
        y,
        functions,
        cone,
        steps,
        times: doc.times.clone(),
        theorems: doc.theorems.clone(),
        options,
        block_tol,
        montecarlo,
        output: doc.output.as_ref().map(PathBuf::from),
    })
}

fn matrix(rows: &Rows, pointer: &str) -> Result<Matrix> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if let Some(i) = rows.iter().position(|row| row.len() != c) {
        return Err(schema(format!("{pointer}/{i}"), format!("row has {} entries, expected {c}", rows[i].len())));
    }
    Ok(Matrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn build_function(doc: &FunctionDoc, n: usize, pointer: &str) -> Result<TestFunction> {
    if doc.values.len() != n {
        return Err(schema(format!("{pointer}/values"), format!("{} values for {n} states", doc.values.len())));
    }
    TestFunction::new(doc.values.clone(), doc.name.clone()).map_err(|e| schema(format!("{pointer}/values"), e.to_string()))
}

fn build_spec(doc: &SpecDoc, n: usize, horizon: f64, pointer: &str) -> Result<ProcessSpec> {
    let p = |s: &str| format!("{pointer}/rates/{s}");
    let rates = match &doc.rates {
        RatesDoc::Constant { q } => RateModel::constant(matrix(q, &p("q"))?, horizon),
        RatesDoc::Piecewise { breakpoints, pieces } => {
            if breakpoints.last() != Some(&horizon) {
                return Err(schema(p("breakpoints"), format!("last breakpoint must equal the horizon {horizon}")));
            }
            let pieces = pieces
                .iter()
                .enumerate()
                .map(|(k, m)| matrix(m, &p(&format!("pieces/{k}"))))
                .collect::<Result<_>>()?;
            RateModel::piecewise(breakpoints.clone(), pieces)
        }
        RatesDoc::Affine { base, slope } => {
            RateModel::affine(matrix(base, &p("base"))?, matrix(slope, &p("slope"))?, horizon)
        }
        RatesDoc::Sampled { times, matrices } => {
            if times.last() != Some(&horizon) {
                return Err(schema(p("times"), format!("last sample time must equal the horizon {horizon}")));
            }
            let matrices = matrices
                .iter()
                .enumerate()
                .map(|(k, m)| matrix(m, &p(&format!("matrices/{k}"))))
                .collect::<Result<_>>()?;
            RateModel::sampled(times.clone(), matrices)
        }
    };
    if rates.n() != n {
        return Err(schema(format!("{pointer}/rates"), format!("rate matrices are {}x{0}, expected {n}x{n}", rates.n())));
    }
    let jumps = match &doc.jumps {
        None => None,
        Some(j) => {
            let kernels = j
                .kernels
                .iter()
                .enumerate()
                .map(|(k, m)| matrix(m, &format!("{pointer}/jumps/kernels/{k}")))
                .collect::<Result<_>>()?;
            Some(JumpSchedule::new(j.times.clone(), kernels))
        }
    };
    let initial = match &doc.initial {
        InitialDoc::State(i) => {
            if *i >= n {
                return Err(schema(format!("{pointer}/initial"), format!("state {i} out of range")));
            }
            let mut v = Vector::zeros(n);
            v[*i] = 1.0;
            v
        }
        InitialDoc::Law(v) => Vector::from_vec(v.clone()),
    };
    let spec = ProcessSpec::new(rates, jumps, initial);
    if let Some(d) = validate(&spec).into_iter().find(|d| d.severity == Severity::Error) {
        return Err(schema(format!("{pointer}{}", d.pointer), d.message));
    }
    Ok(spec)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualSummary {
    pub process: String,
    pub function: String,
    pub t: f64,
    pub backward_max_right: f64,
    pub backward_max_left: f64,
    pub integral_primal: f64,
    pub integral_dual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneratorSummary {
    pub process: String,
    pub s: f64,
    pub side: Side,
    pub richardson_gap: f64,
    pub converged: bool,
    pub diverged: bool,
    pub estimate: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NamedMartingaleTest {
    pub process: String,
    pub function: String,
    pub result: MartingaleTestResult,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpectationCheck {
    pub process: String,
    pub function: String,
    pub t: f64,
    pub exact: f64,
    pub mean: f64,
    pub se: f64,
    pub z: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NamedLinkingTest {
    pub function: String,
    pub t: f64,
    pub kind: TestKind,
    pub pass: bool,
    pub result: LinkingTestResult,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloReport {
    pub paths: usize,
    pub seed: u64,
    pub z_max: f64,
    pub martingale: Vec<NamedMartingaleTest>,
    pub expectations: Vec<ExpectationCheck>,
    pub linking: Vec<NamedLinkingTest>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub checks: usize,
    pub certified: usize,
    pub inconclusive: usize,
    pub soundness_violations: usize,
    pub montecarlo_failures: usize,
    pub exit_code: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub version: &'static str,
    pub scenario: String,
    pub n: usize,
    pub grid_steps: usize,
    pub knots: usize,
    pub stochasticity_x: StochasticityReport,
    pub stochasticity_y: StochasticityReport,
    pub comparisons: Vec<ComparisonReport>,
    pub classes: Vec<ClassReport>,
    pub residuals: Vec<ResidualSummary>,
    pub generators: Vec<GeneratorSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub montecarlo: Option<MonteCarloReport>,
    pub summary: RunSummary,
}

/// Report plus the text of every artifact, keyed by file name.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub files: Vec<(String, String)>,
    pub exit_code: i32,
}

/// Builds both evolution systems on a grid containing every rate
/// breakpoint, jump epoch, comparison time and Monte Carlo checkpoint.
pub fn build_systems(sc: &Scenario) -> Result<(EvolutionSystem, EvolutionSystem)> {
    let mut extra = Vec::new();
    for s in [&sc.x, &sc.y] {
        extra.extend(s.rates.breakpoints());
        extra.extend_from_slice(s.epochs());
    }
    extra.extend_from_slice(&sc.times);
    if let Some(mc) = &sc.montecarlo {
        extra.extend_from_slice(&mc.checkpoints);
    }
    let grid = TimeGrid::new(sc.x.horizon(), sc.steps, &extra)?;
    let (x, y) = rayon::join(
        || build_evolution(&sc.x, &grid, sc.block_tol),
        || build_evolution(&sc.y, &grid, sc.block_tol),
    );
    Ok((x?, y?))
}

fn all_functions(sc: &Scenario) -> Vec<TestFunction> {
    let mut fs = sc.functions.clone();
    if fs.is_empty() {
        if let Some(c) = &sc.cone {
            fs = c.generators.clone();
        }
    }
    fs
}

/// Runs every requested check of a scenario.
pub fn run_scenario(sc: &Scenario) -> Result<RunOutput> {
    let (ex, ey) = build_systems(sc)?;
    let knots = ex.grid().knots().to_vec();
    let functions = all_functions(sc);

    let jobs: Vec<(usize, f64, Theorem)> = sc
        .functions
        .iter()
        .enumerate()
        .flat_map(|(i, _)| sc.times.iter().flat_map(move |&t| sc.theorems.iter().map(move |&th| (i, t, th))))
        .collect();
    let comparisons: Vec<ComparisonReport> = jobs
        .par_iter()
        .map(|&(i, t, th)| check(th, &ex, &ey, &sc.functions[i], t, &sc.options))
        .collect::<Result<_>>()?;
    let classes: Vec<ClassReport> = match &sc.cone {
        Some(cone) => sc
            .times
            .iter()
            .map(|&t| sweep_function_class(&ex, &ey, cone, t, &sc.options))
            .collect::<Result<_>>()?,
        None => Vec::new(),
    };

    let t_max = sc.times.iter().copied().fold(0.0, f64::max);
    let mut residual_csv = String::from("process,function,t,s,residual_right,residual_left\n");
    let mut residuals = Vec::new();
    for (label, ev) in [("x", &ex), ("y", &ey)] {
        for f in &functions {
            let curve = check_backward_equation(ev, f, t_max)?;
            let integral = check_integral_representation(ev, f, 0.0, t_max)?;
            let cell = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
            for k in 0..curve.s.len() {
                writeln!(
                    residual_csv,
                    "{label},{},{t_max},{},{},{}",
                    f.label(),
                    curve.s[k],
                    cell(curve.right[k]),
                    cell(curve.left[k])
                )
                .expect("string write");
            }
            residuals.push(ResidualSummary {
                process: label.into(),
                function: f.label(),
                t: t_max,
                backward_max_right: curve.max_right(),
                backward_max_left: curve.max_left(),
                integral_primal: integral.primal,
                integral_dual: integral.dual,
            });
        }
    }

    let mut generator_csv = String::from("process,s,side,h,gap,richardson_gap,converged,diverged\n");
    let mut generators = Vec::new();
    let horizon = sc.x.horizon();
    for (label, ev) in [("x", &ex), ("y", &ey)] {
        let mut probes = vec![(0.0, Side::Right), (knots[knots.len() / 2], Side::Right), (horizon, Side::Left)];
        let mut special: Vec<f64> = ev.spec().rates.breakpoints();
        special.extend_from_slice(ev.spec().epochs());
        for s in special.into_iter().filter(|&s| s > 0.0 && s < horizon) {
            probes.push((s, Side::Left));
            probes.push((s, Side::Right));
        }
        for (s, side) in probes {
            let s = knots[ev.grid().nearest(s)];
            let est = estimate_generator(ev, s, side)?;
            for row in &est.table {
                writeln!(
                    generator_csv,
                    "{label},{s},{},{:e},{},{:e},{},{}",
                    side_name(side),
                    row.h,
                    row.gap.map(|g| format!("{g:e}")).unwrap_or_default(),
                    est.richardson_gap,
                    est.converged,
                    est.diverged
                )
                .expect("string write");
            }
            generators.push(GeneratorSummary {
                process: label.into(),
                s,
                side,
                richardson_gap: est.richardson_gap,
                converged: est.converged,
                diverged: est.diverged,
                estimate: est.estimate.row_iter().map(|r| r.iter().copied().collect()).collect(),
            });
        }
    }

    let mut linking_csv = String::from("function,t,theorem,s,g\n");
    for r in &comparisons {
        if let Some(curve) = &r.linking_curve {
            for (s, g) in curve.s.iter().zip(&curve.g) {
                writeln!(linking_csv, "{},{},{},{s},{g:.17e}", r.function, r.t, r.theorem.name()).expect("string write");
            }
        }
    }

    let mut files = Vec::new();
    let montecarlo = match &sc.montecarlo {
        Some(mc) => {
            let (report, csv) = run_montecarlo(sc, mc, &ex, &ey, &comparisons)?;
            files.push(("montecarlo.csv".to_string(), csv));
            Some(report)
        }
        None => None,
    };

    let certified = comparisons.iter().filter(|r| r.verdict.is_certified()).count()
        + classes.iter().filter(|c| c.verdict.is_certified()).count();
    let checks = comparisons.len() + classes.len();
    let soundness_violations = comparisons.iter().filter(|r| r.soundness_violation).count();
    let montecarlo_failures = montecarlo.as_ref().map_or(0, |m| {
        m.martingale.iter().filter(|t| !t.result.pass).count()
            + m.expectations.iter().filter(|e| !e.pass).count()
            + m.linking.iter().filter(|l| !l.pass).count()
    });
    let exit_code = if soundness_violations > 0 {
        EXIT_SOUNDNESS
    } else if certified < checks || montecarlo_failures > 0 {
        EXIT_INCONCLUSIVE
    } else {
        EXIT_OK
    };
    let report = RunReport {
        version: SCHEMA_VERSION,
        scenario: sc.name.clone(),
        n: sc.space.n(),
        grid_steps: sc.steps,
        knots: knots.len(),
        stochasticity_x: ex.certify(),
        stochasticity_y: ey.certify(),
        comparisons,
        classes,
        residuals,
        generators,
        montecarlo,
        summary: RunSummary {
            checks,
            certified,
            inconclusive: checks - certified,
            soundness_violations,
            montecarlo_failures,
            exit_code,
        },
    };
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    files.insert(0, ("report.json".to_string(), json));
    files.insert(1, ("linking_curve.csv".to_string(), linking_csv));
    files.insert(2, ("residuals.csv".to_string(), residual_csv));
    files.insert(3, ("generator_convergence.csv".to_string(), generator_csv));
    Ok(RunOutput { report, files, exit_code })
}

fn side_name(side: Side) -> &'static str {
    match side {
        Side::Right => "right",
        Side::Left => "left",
    }
}

fn run_montecarlo(
    sc: &Scenario,
    mc: &MonteCarloSettings,
    ex: &EvolutionSystem,
    ey: &EvolutionSystem,
    comparisons: &[ComparisonReport],
) -> Result<(MonteCarloReport, String)> {
    // Disjoint stream families for the two processes.
    let paths_x = simulate(&sc.x, mc.paths, mc.seed);
    let paths_y = simulate(&sc.y, mc.paths, mc.seed ^ 0x9e37_79b9_7f4a_7c15);
    let functions = all_functions(sc);
    let mut csv = String::from(CSV_HEADER);
    let mut martingale = Vec::new();
    let mut expectations = Vec::new();
    for (label, spec, ev, paths) in [("x", &sc.x, ex, &paths_x), ("y", &sc.y, ey, &paths_y)] {
        for f in &functions {
            let result = martingale_test(paths, spec, f, &mc.checkpoints, mc.z_max)?;
            result.to_csv_rows(&format!("martingale:{label}:{}", f.label()), &mut csv);
            martingale.push(NamedMartingaleTest { process: label.into(), function: f.label(), result });
            for &t in &sc.times {
                let exact = ev.spec().initial.dot(&ev.backward(&f.values, ev.grid().index_of(t)?).right[0]);
                let (mean, se) = empirical_mean(paths, f, t);
                let z = if se > 0.0 {
                    (mean - exact) / se
                } else if (mean - exact).abs() <= 1e-12 {
                    0.0
                } else {
                    f64::INFINITY
                };
                expectations.push(ExpectationCheck {
                    process: label.into(),
                    function: f.label(),
                    t,
                    exact,
                    mean,
                    se,
                    z,
                    pass: z.abs() <= mc.z_max,
                });
            }
        }
    }

    let mut linking = Vec::new();
    let mut notes = Vec::new();
    for f in &sc.functions {
        for &t in &sc.times {
            let verdict = comparisons
                .iter()
                .find(|r| r.function == f.label() && r.t == t && r.linking_curve.is_some())
                .map(|r| r.verdict);
            let kind = match verdict {
                Some(Verdict::XGeY) => TestKind::Super,
                Some(Verdict::XLeY) => TestKind::Sub,
                Some(Verdict::Equal) => TestKind::TwoSided,
                Some(Verdict::Inconclusive) => {
                    notes.push(format!("linking test skipped for {} at t = {t}: no certified direction", f.label()));
                    continue;
                }
                None => continue,
            };
            let result =
                linking_supermartingale_test(&paths_y, ex, ey, f, t, &mc.checkpoints, mc.z_max, kind)?;
            result.test.to_csv_rows(&format!("linking:{}:{t}", f.label()), &mut csv);
            let pass = result.test.pass && result.oracle_z.abs() <= mc.z_max;
            linking.push(NamedLinkingTest { function: f.label(), t, kind, pass, result });
        }
    }
    Ok((
        MonteCarloReport { paths: mc.paths, seed: mc.seed, z_max: mc.z_max, martingale, expectations, linking, notes },
        csv,
    ))
}

/// Writes each file to `dir` through a temporary sibling and a rename.
pub fn write_outputs(dir: &Path, files: &[(String, String)]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (name, contents) in files {
        let tmp = dir.join(format!(".{name}.tmp"));
        fs::write(&tmp, contents)?;
        fs::rename(&tmp, dir.join(name))?;
    }
    Ok(())
}
