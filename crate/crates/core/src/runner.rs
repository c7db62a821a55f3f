//! Runs scenarios: builds the geometry, executes the requested checks,
//! writes one CSV per launch and a JSON report.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value as Json};
use thiserror::Error;

use crate::catalog;
use crate::clairaut::{self, Launch};
use crate::curvature::{self, CurvatureItem, CurvatureReport, HatLabel, ItemFamily, Stamp};
use crate::error::GeoError;
use crate::expr::Expr;
use crate::geodesic::{self, CaseResiduals, CurveSample, GeodesicCase, GeodesicTrace};
use crate::manifold::{ChartManifold, FdConfig, LaplacianSign, ScalarField};
use crate::rmap::{self, ProductRiemannianMap, RiemannianMap};
use crate::scenario::{ConfigError, LaplacianChoice, MapSpec, ProductSpec, Scenario};
use crate::warped::{self, WarpedProduct};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("configuration error: {0}")]
    Config(#[from] ConfigError),
    #[error("unknown check `{0}` (see `warpgeo list`)")]
    UnknownCheck(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl RunError {
    /// Process exit code for this error.
    pub fn exit_code(&self) -> i32 {
        2
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn cfg(key: &str, message: impl Into<String>) -> RunError {
    RunError::Config(ConfigError {
        key: key.to_string(),
        line: None,
        message: message.into(),
    })
}

/// Check names with one-line summaries, alphabetized.
pub const CHECKS: &[(&str, &str)] = &[
    (
        "acceleration-split",
        "acceleration of a curve on a warped product split into base and fiber parts",
    ),
    (
        "angle-identity",
        "g(T(U,U) + A(Y,U), Y) = b cos ω sin ω dω/dt along geodesics",
    ),
    ("clairaut", "umbilical fibers with H = -grad g, and e^g sin ω conserved along geodesics"),
    ("connection", "Levi-Civita connection of a warped product on lifted fields"),
    ("curvature-symmetries", "Riemann tensor symmetries and the first Bianchi identity"),
    ("geodesic-case:horizontal", "conditions for a horizontal curve to be a geodesic"),
    ("geodesic-case:mixed", "conditions for a curve with both parts nonzero to be a geodesic"),
    ("geodesic-case:vertical", "conditions for a vertical curve to be a geodesic"),
    ("geodesic-speed", "conservation of g(γ', γ') under the integrator"),
    ("isometry", "the map is isometric on the horizontal space"),
    ("oneill", "algebraic and covariant-derivative identities of the O'Neill tensors"),
    ("ricci:item1", "Ricci curvature on vertical pairs"),
    ("ricci:item2", "Ricci curvature on lifts of fiber vectors vertical for the second factor"),
    ("ricci:item3", "Ricci curvature on lifts of base vectors horizontal for the first factor"),
    ("ricci:item4", "Ricci curvature on lifts of fiber vectors horizontal for the second factor"),
    ("sectional:item1", "sectional curvature of vertical planes"),
    ("sectional:item2", "sectional curvature of planes of fiber lifts vertical for the second factor"),
    ("sectional:item3", "sectional curvature of planes of base lifts horizontal for the first factor"),
    ("sectional:item4", "sectional curvature of mixed vertical/horizontal planes"),
    ("sectional:item5", "sectional curvature of planes of fiber lifts horizontal for the second factor"),
    ("sectional:item6", "sectional curvature of mixed planes of fiber lifts"),
];

const DESCRIPTIONS: &[(&str, &str)] = &[
    (
        "acceleration-split",
        "For a curve γ = (γ1, γ2) on M1 x_f M2 with velocity X1 + X2, compares the \
directly computed acceleration ∇γ'γ' with ∇¹X1 + 2 (X1 f / f) X2 − g(X2, X2) ∇ln f + ∇²X2, \
where ∇¹ and ∇² are the factor connections. The acceleration is differenced from the sampled \
velocities. Needs a warped product and launches. Default tolerance 1e-3.",
    ),
    (
        "angle-identity",
        "Along each launched geodesic, with U and Y the vertical and horizontal parts of γ' \
and ω the angle between γ' and the horizontal space, compares g(T(U,U) + A(Y,U), Y) with \
b cos ω sin ω dω/dt, the latter evaluated as −(b/2) d/dt cos²ω. This is the identity from which \
the Clairaut criterion follows. Default tolerance 1e-3.",
    ),
    (
        "clairaut",
        "Tests whether r = e^g makes the map a Clairaut map: samples T(U,U) + g(U,U) grad g over \
random unit vertical U (the fibers must be totally umbilical with mean curvature −grad g), then \
integrates every launch and measures the drift of e^g sin ω, plus the turning-point relation \
e^g = invariant where sin ω = 1. `clairaut_g = \"auto\"` uses ln f. Passes when the fiber test \
holds and every drift is within tolerance (default 1e-4, relative).",
    ),
    (
        "connection",
        "Compares ∇_X Y on lifted fields of a warped product with the closed-form split: \
base-base gives the base connection, mixed terms give (X f / f) V, and fiber-fiber gives \
the fiber connection minus g(V, W) grad ln f. Random polynomial fields at random points. \
Default tolerance 1e-4.",
    ),
    (
        "curvature-symmetries",
        "Evaluates the Riemann tensor by differencing Christoffel symbols and checks \
Rm(X,Y,Z,W) = −Rm(Y,X,Z,W) = −Rm(X,Y,W,Z) = Rm(Z,W,X,Y) and the first Bianchi identity, \
relative to max(1, max |Rm|). Default tolerance 1e-4.",
    ),
    (
        "geodesic-case",
        "Splits ∇γ'γ' along each launch. `vertical`: |V D_t U| and |T(U,U)|. `horizontal`: \
|A(Y,Y)| and |H D_t Y|. `mixed`: |V D_t U + T(U,Y) + A(Y,Y)| and |T(U,U) + H D_t Y + A(Y,U)|. \
A launch whose angle strays more than 0.1 from the requested pure case fails. \
Default tolerance 1e-3.",
    ),
    (
        "geodesic-speed",
        "Relative drift of b = g(γ', γ') over each launch. A launch that leaves the chart fails. \
Default tolerance 1e-6.",
    ),
    (
        "isometry",
        "max |g_N(φ_* e_a, φ_* e_b) − δ_ab| over a horizontal orthonormal frame at sampled \
points. Default tolerance 1e-6.",
    ),
    (
        "oneill",
        "At sampled points: symmetry of T on vertical pairs, antisymmetry of A on horizontal \
pairs, reversal of the two distributions, skew-symmetry of T_E and A_E, projection algebra \
(tolerance `oneill-algebra`, 1e-5), the four splittings of ∇ on vertical/horizontal pairs and \
A_X E = H∇_E X for basic X (tolerance `oneill`, 1e-4).",
    ),
    (
        "ricci",
        "Closed forms for Ric on lifted vector pairs of a product map φ = φ1 x φ2, compared with \
the Ricci tensor computed from the metric. item1: vertical pairs. item2: fiber lifts vertical \
for φ2. item3: base lifts horizontal for φ1. item4: fiber lifts horizontal for φ2. Items 2 and 4 \
carry a Laplacian sign (`curvature.laplacian`, default minus). Items 3 and 4 need factor maps \
onto their targets. Default tolerance 1e-3.",
    ),
    (
        "sectional",
        "Closed forms for the sectional curvature of lifted planes of a product map, compared with \
the curvature computed from the metric (sphere = +1). item1: vertical planes. item2: fiber \
lifts vertical for φ2, with the factor curvature of (M2, g2). item3/item5: horizontal lifts \
for φ1/φ2. item4: one vertical and one horizontal vector. item6: fiber lifts, one vertical and \
one horizontal for φ2. Items 1, 3, 4, 5 are evaluated under both orientations of the \
second-fundamental-form terms and pass when the selected orientation is the same at every point. \
Default tolerance 1e-3.",
    ),
];

/// Alphabetized catalog listing.
pub fn list_catalog() -> String {
    let mut out = String::from("manifolds:\n");
    for n in catalog::MANIFOLD_NAMES {
        out.push_str(&format!("  {n}\n"));
    }
    out.push_str("maps:\n");
    for n in ["heisenberg", "identity", "pi1", "pi2", "{ phi1 = [...], phi2 = [...], target_base, target_fiber, target_warp }"] {
        out.push_str(&format!("  {n}\n"));
    }
    out.push_str("checks:\n");
    for (n, d) in CHECKS {
        out.push_str(&format!("  {n:<26} {d}\n"));
    }
    out
}

/// Long description of a check or check family.
pub fn describe_check(name: &str) -> Result<String, RunError> {
    let family = name.split(':').next().unwrap_or(name);
    let known = CHECKS.iter().any(|(n, _)| *n == name || n.split(':').next() == Some(name));
    if !known {
        return Err(RunError::UnknownCheck(name.to_string()));
    }
    let text = DESCRIPTIONS
        .iter()
        .find(|(n, _)| *n == family)
        .map(|(_, d)| *d)
        .ok_or_else(|| RunError::UnknownCheck(name.to_string()))?;
    Ok(format!("{name}\n\n{text}\n"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Check {
    AccelerationSplit,
    AngleIdentity,
    Clairaut,
    Connection,
    CurvatureSymmetries,
    Case(GeodesicCase),
    GeodesicSpeed,
    Isometry,
    Oneill,
    Item(CurvatureItem),
}

fn parse_check(name: &str) -> Result<Check, RunError> {
    let unknown = || RunError::UnknownCheck(name.to_string());
    Ok(match name {
        "acceleration-split" => Check::AccelerationSplit,
        "angle-identity" => Check::AngleIdentity,
        "clairaut" => Check::Clairaut,
        "connection" => Check::Connection,
        "curvature-symmetries" => Check::CurvatureSymmetries,
        "geodesic-case:vertical" => Check::Case(GeodesicCase::Vertical),
        "geodesic-case:horizontal" => Check::Case(GeodesicCase::Horizontal),
        "geodesic-case:mixed" => Check::Case(GeodesicCase::Mixed),
        "geodesic-speed" => Check::GeodesicSpeed,
        "isometry" => Check::Isometry,
        "oneill" => Check::Oneill,
        _ => {
            let (family, item) = name.split_once(":item").ok_or_else(unknown)?;
            let family = match family {
                "ricci" => ItemFamily::Ricci,
                "sectional" => ItemFamily::Sectional,
                _ => return Err(unknown()),
            };
            let item: u8 = item.parse().map_err(|_| unknown())?;
            Check::Item(CurvatureItem::new(family, item).map_err(|_| unknown())?)
        }
    })
}

fn default_tolerance(check: &Check) -> f64 {
    match check {
        Check::Connection | Check::Clairaut | Check::Oneill | Check::CurvatureSymmetries => 1e-4,
        Check::GeodesicSpeed | Check::Isometry => 1e-6,
        _ => 1e-3,
    }
}

/// Map under test: a product map, or a plain map for non-product examples.
#[derive(Debug, Clone)]
enum MapKind {
    Product(ProductRiemannianMap),
    Plain(RiemannianMap),
}

impl MapKind {
    fn whole(&self) -> &RiemannianMap {
        match self {
            MapKind::Product(p) => p.whole(),
            MapKind::Plain(m) => m,
        }
    }
}

struct Setup {
    product: Option<WarpedProduct>,
    map: Option<MapKind>,
    manifold: ChartManifold,
    g: Option<ScalarField>,
}

fn build_product(spec: &ProductSpec, key: &str, fd: FdConfig) -> Result<WarpedProduct, RunError> {
    let base = catalog::manifold(&spec.base).map_err(|e| cfg(&format!("{key}.base"), e.to_string()))?;
    let fiber = catalog::manifold(&spec.fiber).map_err(|e| cfg(&format!("{key}.fiber"), e.to_string()))?;
    let warp_key = format!("{key}.warp");
    let expr = Expr::parse(&spec.warp, base.dim()).map_err(|e| cfg(&warp_key, e.to_string()))?;
    let w = WarpedProduct::build(base, fiber, ScalarField::from_expr(expr))
        .map_err(|e| cfg(&warp_key, e.to_string()))?;
    Ok(w.with_fd(fd))
}

fn build(s: &Scenario) -> Result<Setup, RunError> {
    let product = match &s.product {
        Some(spec) => Some(build_product(spec, "warped_product", s.fd)?),
        None => None,
    };
    let map = match &s.map {
        None => None,
        Some(MapSpec::Named(n)) if n == "heisenberg" => Some(MapKind::Plain(
            catalog::heisenberg_submersion().with_fd(s.fd),
        )),
        Some(spec) => {
            let w = product
                .as_ref()
                .ok_or_else(|| cfg("map", "product maps need a warped_product block"))?;
            Some(MapKind::Product(match spec {
                MapSpec::Named(n) => match n.as_str() {
                    "pi1" => ProductRiemannianMap::pi1(w),
                    "pi2" => ProductRiemannianMap::pi2(w),
                    "identity" => ProductRiemannianMap::identity(w),
                    other => return Err(cfg("map", format!("unknown map `{other}`"))),
                },
                MapSpec::Exprs { phi1, phi2, target } => {
                    let target = build_product(target, "map.target", s.fd)?;
                    let n = w.dim();
                    let parse = |list: &[String], key: &str| -> Result<Vec<Expr>, RunError> {
                        list.iter()
                            .map(|e| Expr::parse(e, n).map_err(|err| cfg(key, err.to_string())))
                            .collect()
                    };
                    ProductRiemannianMap::from_exprs(
                        "map",
                        w.clone(),
                        target,
                        parse(phi1, "map.phi1")?,
                        parse(phi2, "map.phi2")?,
                    )
                    .map_err(|e| cfg("map", e.to_string()))?
                }
            }
            .with_fd(s.fd)))
        }
    };
    let manifold = match (&s.manifold, &product, &map) {
        (Some(name), _, _) => catalog::manifold(name)
            .map_err(|e| cfg("manifold", e.to_string()))?
            .with_fd(s.fd),
        (None, Some(w), _) => w.manifold().clone(),
        (None, None, Some(m)) => m.whole().source().clone(),
        (None, None, None) => return Err(cfg("manifold", "nothing to run on")),
    };
    let g = match (&map, s.clairaut_g.as_str()) {
        (Some(MapKind::Product(p)), "auto") => Some(clairaut::auto_exponent(p)),
        (_, "auto") => None,
        (_, src) => {
            let n = product.as_ref().map_or(manifold.dim(), |w| w.dim());
            let e = Expr::parse(src, n).map_err(|e| cfg("clairaut_g", e.to_string()))?;
            Some(ScalarField::from_expr(e))
        }
    };
    Ok(Setup {
        product,
        map,
        manifold,
        g,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    NotComputable,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub status: Status,
    pub max_residual: f64,
    pub tolerance: f64,
    pub stamps: Vec<String>,
    pub message: Option<String>,
    pub details: Json,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    /// Seconds since the Unix epoch; the only field that varies between runs.
    pub timestamp: String,
    pub manifold: String,
    pub map: Option<String>,
    pub clairaut_g: Option<String>,
    pub fd: FdConfig,
    pub checks: Vec<CheckResult>,
    pub traces: Vec<String>,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub exit_code: i32,
    pub report_path: PathBuf,
    pub trace_paths: Vec<PathBuf>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub overrides: Vec<String>,
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
}

/// Everything computed once per launch and shared by the checks.
struct LaunchData {
    trace: Result<GeodesicTrace, GeoError>,
    samples: Option<Result<Vec<CurveSample>, GeoError>>,
}

fn fnv(name: &str) -> u64 {
    name.bytes().fold(0xcbf29ce484222325_u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x100000001b3)
    })
}

/// Seeded generator private to one check, so results do not depend on
/// the order checks are scheduled in.
fn check_rng(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ fnv(name))
}

pub fn run_file(path: &Path, opts: &RunOptions) -> Result<RunOutcome, RunError> {
    let src = fs::read_to_string(path).map_err(io_err(path))?;
    let scenario = Scenario::parse(&src, &opts.overrides)?;
    let base = path.parent().unwrap_or(Path::new("."));
    run_scenario(&scenario, base, opts)
}

pub fn run_scenario(s: &Scenario, base_dir: &Path, opts: &RunOptions) -> Result<RunOutcome, RunError> {
    let checks: Vec<(String, Check)> = s
        .checks
        .iter()
        .map(|n| parse_check(n).map(|c| (n.clone(), c)))
        .collect::<Result<_, _>>()?;
    let setup = build(s)?;
    let seed = opts.seed.unwrap_or(s.seed);
    validate(s, &setup, &checks)?;

    let needs_samples = checks
        .iter()
        .any(|(_, c)| matches!(c, Check::Case(_) | Check::AngleIdentity));
    let launches: Vec<LaunchData> = s
        .launches
        .par_iter()
        .map(|l| launch_data(&setup, l, needs_samples))
        .collect();

    let results: Vec<CheckResult> = checks
        .par_iter()
        .map(|(name, check)| {
            let tol = s
                .tolerances
                .get(name.as_str())
                .or_else(|| s.tolerances.get(name.split(':').next().unwrap_or(name)))
                .copied()
                .unwrap_or_else(|| default_tolerance(check));
            let mut rng = check_rng(seed, name);
            run_check(name, *check, tol, s, &setup, &launches, &mut rng)
        })
        .collect();

    let out_dir = match (&opts.out_dir, &s.output_dir) {
        (Some(d), _) => d.clone(),
        (None, Some(d)) => base_dir.join(d),
        (None, None) => PathBuf::from("warpgeo-out"),
    };
    fs::create_dir_all(&out_dir).map_err(io_err(&out_dir))?;

    let trace_paths: Vec<PathBuf> = (0..launches.len())
        .map(|k| out_dir.join(format!("{}_launch{:02}.csv", s.prefix, k + 1)))
        .collect();
    let written: Vec<Result<(), RunError>> = launches
        .par_iter()
        .zip(trace_paths.par_iter())
        .map(|(data, path)| write_trace(path, data, &setup, &checks, s.stride))
        .collect();
    for w in written {
        w?;
    }

    let passed = results.iter().all(|r| r.status != Status::Fail);
    let report = RunReport {
        scenario: s.name.clone(),
        seed,
        timestamp: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs().to_string())
            .unwrap_or_default(),
        manifold: setup.manifold.name().to_string(),
        map: setup.map.as_ref().map(|m| m.whole().name().to_string()),
        clairaut_g: setup.g.as_ref().map(|g| g.label().to_string()),
        fd: s.fd,
        checks: results,
        traces: trace_paths
            .iter()
            .filter_map(|p| p.file_name().map(|f| f.to_string_lossy().into_owned()))
            .collect(),
        passed,
    };
    let report_path = out_dir.join(format!("{}_report.json", s.prefix));
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    fs::write(&report_path, text).map_err(io_err(&report_path))?;
    Ok(RunOutcome {
        exit_code: if passed { 0 } else { 1 },
        report,
        report_path,
        trace_paths,
    })
}

fn validate(s: &Scenario, setup: &Setup, checks: &[(String, Check)]) -> Result<(), RunError> {
    let n = setup.manifold.dim();
    for l in &s.launches {
        if l.point.len() != n || l.velocity.len() != n {
            return Err(cfg(
                "launch.point",
                format!("launch {:?} does not match dimension {n}", l.point),
            ));
        }
        if !setup.manifold.contains(&l.point) {
            return Err(cfg("launch.point", format!("{:?} is outside the chart", l.point)));
        }
    }
    for p in &s.points {
        if p.len() != n || !setup.manifold.contains(p) {
            return Err(cfg("curvature.points", format!("{p:?} is not a point of the chart")));
        }
    }
    for (name, c) in checks {
        let needs_product = matches!(c, Check::Connection | Check::AccelerationSplit);
        let needs_product_map = matches!(c, Check::Clairaut | Check::Item(_));
        let needs_map = matches!(
            c,
            Check::Oneill | Check::Isometry | Check::Case(_) | Check::AngleIdentity
        );
        let needs_launches = matches!(
            c,
            Check::Case(_) | Check::AngleIdentity | Check::AccelerationSplit | Check::GeodesicSpeed
        );
        if needs_product && setup.product.is_none() {
            return Err(cfg("checks", format!("`{name}` needs a warped_product")));
        }
        if needs_product_map && !matches!(setup.map, Some(MapKind::Product(_))) {
            return Err(cfg("checks", format!("`{name}` needs a product map")));
        }
        if needs_map && setup.map.is_none() {
            return Err(cfg("checks", format!("`{name}` needs a map")));
        }
        if needs_launches && s.launches.is_empty() {
            return Err(cfg("checks", format!("`{name}` needs at least one launch")));
        }
        if *c == Check::Clairaut && setup.g.is_none() {
            return Err(cfg("clairaut_g", "needs an expression or \"auto\" with a product map"));
        }
        if (needs_product || needs_product_map || needs_map) && setup.manifold.dim() != setup_dim(setup) {
            return Err(cfg("manifold", "differs in dimension from the map source"));
        }
    }
    Ok(())
}

fn setup_dim(setup: &Setup) -> usize {
    match (&setup.map, &setup.product) {
        (Some(m), _) => m.whole().source().dim(),
        (None, Some(w)) => w.dim(),
        (None, None) => setup.manifold.dim(),
    }
}

fn launch_data(setup: &Setup, l: &Launch, needs_samples: bool) -> LaunchData {
    let trace = geodesic::integrate(
        &setup.manifold,
        &DVector::from_column_slice(&l.point),
        &DVector::from_column_slice(&l.velocity),
        l.t_end,
        l.dt,
    )
    .and_then(|mut t| {
        if let Some(m) = &setup.map {
            geodesic::decompose(m.whole(), &mut t)?;
        }
        Ok(t)
    });
    let samples = match (&trace, &setup.map) {
        (Ok(t), Some(m)) if needs_samples => Some(geodesic::curve_samples(m.whole(), t)),
        _ => None,
    };
    LaunchData { trace, samples }
}

fn result(name: &str, tol: f64, residual: f64, ok: bool, details: Json) -> CheckResult {
    CheckResult {
        name: name.to_string(),
        status: if ok { Status::Pass } else { Status::Fail },
        max_residual: residual,
        tolerance: tol,
        stamps: Vec::new(),
        message: None,
        details,
    }
}

fn failure(name: &str, tol: f64, message: String) -> CheckResult {
    CheckResult {
        name: name.to_string(),
        status: Status::Fail,
        max_residual: f64::NAN,
        tolerance: tol,
        stamps: Vec::new(),
        message: Some(message),
        details: Json::Null,
    }
}

/// Fold a per-launch measurement into a check result.
fn per_launch(
    name: &str,
    tol: f64,
    launches: &[LaunchData],
    measure: impl Fn(&LaunchData) -> Result<(f64, Json), String>,
) -> CheckResult {
    let mut worst = 0.0_f64;
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for (k, l) in launches.iter().enumerate() {
        match measure(l) {
            Ok((r, d)) => {
                worst = worst.max(r);
                rows.push(json!({"launch": k + 1, "residual": r, "details": d}));
            }
            Err(e) => {
                errors.push(format!("launch {}: {e}", k + 1));
                rows.push(json!({"launch": k + 1, "error": e}));
            }
        }
    }
    let mut r = result(name, tol, worst, errors.is_empty() && worst <= tol, json!({ "launches": rows }));
    if !errors.is_empty() {
        r.message = Some(errors.join("; "));
    }
    r
}

fn trace_of(l: &LaunchData) -> Result<&GeodesicTrace, String> {
    l.trace.as_ref().map_err(|e| e.to_string())
}

fn samples_of(l: &LaunchData) -> Result<&Vec<CurveSample>, String> {
    match &l.samples {
        Some(Ok(s)) => Ok(s),
        Some(Err(e)) => Err(e.to_string()),
        None => Err("curve samples unavailable".into()),
    }
}

fn case_of(l: &LaunchData, case: GeodesicCase) -> Result<CaseResiduals, String> {
    geodesic::case_residuals(samples_of(l)?, trace_of(l)?, case).map_err(|e| e.to_string())
}

fn fmax(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(0.0, f64::max)
}

fn points_for(s: &Scenario, setup: &Setup, rng: &mut ChaCha8Rng, count: usize) -> Vec<Vec<f64>> {
    if !s.points.is_empty() {
        return s.points.clone();
    }
    (0..count)
        .map(|_| setup.manifold.domain().sample(rng).as_slice().to_vec())
        .collect()
}

fn run_check(
    name: &str,
    check: Check,
    tol: f64,
    s: &Scenario,
    setup: &Setup,
    launches: &[LaunchData],
    rng: &mut ChaCha8Rng,
) -> CheckResult {
    let geo = |r: Result<CheckResult, GeoError>| r.unwrap_or_else(|e| failure(name, tol, e.to_string()));
    match check {
        Check::GeodesicSpeed => per_launch(name, tol, launches, |l| {
            let t = trace_of(l)?;
            if let Some(te) = t.exit_time {
                return Err(format!("left the chart at t = {te}"));
            }
            Ok((t.speed_drift(), json!({"b": t.speed_sq.first()})))
        }),
        Check::Case(case) => per_launch(name, tol, launches, |l| {
            let c = case_of(l, case)?;
            let (v, h, a) = (fmax(&c.vertical), fmax(&c.horizontal), fmax(&c.a_yy));
            Ok((v.max(h), json!({"vertical": v, "horizontal": h, "a_yy": a, "exit_time": trace_of(l)?.exit_time})))
        }),
        Check::AngleIdentity => per_launch(name, tol, launches, |l| {
            let at = clairaut::angle_identity(samples_of(l)?, trace_of(l)?);
            Ok((at.max(), json!({"exit_time": trace_of(l)?.exit_time})))
        }),
        Check::AccelerationSplit => {
            let w = setup.product.as_ref().expect("validated");
            per_launch(name, tol, launches, |l| {
                let e = geodesic::expansion_check(w, trace_of(l)?).map_err(|e| e.to_string())?;
                Ok((e.max(), json!({"max_lhs": fmax(&e.lhs_norm)})))
            })
        }
        Check::Connection => geo((|| {
            let w = setup.product.as_ref().expect("validated");
            let rep = warped::verify_connection_law(w, s.samples, rng)?;
            let r = rep.max_residual();
            Ok(result(name, tol, r, r <= tol, serde_json::to_value(&rep).unwrap_or(Json::Null)))
        })()),
        Check::Oneill => geo((|| {
            let map = setup.map.as_ref().expect("validated").whole();
            let rep = rmap::oneill_check(map, s.samples, rng)?;
            let alg_tol = s.tolerances.get("oneill-algebra").copied().unwrap_or(1e-5);
            let (alg, der) = (rep.algebra_residual(), rep.derivative_residual());
            let mut r = result(
                name,
                tol,
                der.max(alg),
                alg <= alg_tol && der <= tol,
                json!({"algebra": alg, "algebra_tolerance": alg_tol, "derivative": der, "report": rep}),
            );
            r.max_residual = der.max(alg);
            Ok(r)
        })()),
        Check::Isometry => geo((|| {
            let map = setup.map.as_ref().expect("validated").whole();
            let mut worst = 0.0_f64;
            for p in points_for(s, setup, rng, s.samples) {
                worst = worst.max(map.isometry_residual(&p)?);
            }
            Ok(result(name, tol, worst, worst <= tol, Json::Null))
        })()),
        Check::CurvatureSymmetries => geo((|| {
            let mut worst = 0.0_f64;
            let mut table = Vec::new();
            for p in points_for(s, setup, rng, s.samples) {
                let rep = curvature::bianchi_and_symmetry_check(&setup.manifold, &p)?;
                worst = worst.max(rep.max());
                table.push(rep);
            }
            Ok(result(name, tol, worst, worst <= tol, json!({"points": table})))
        })()),
        Check::Clairaut => geo(clairaut_check(name, tol, s, setup, rng)),
        Check::Item(item) => geo(item_check(name, item, tol, s, setup, rng)),
    }
}

fn clairaut_check(
    name: &str,
    tol: f64,
    s: &Scenario,
    setup: &Setup,
    rng: &mut ChaCha8Rng,
) -> Result<CheckResult, GeoError> {
    let map = match setup.map.as_ref() {
        Some(MapKind::Product(p)) => p,
        _ => unreachable!("validated"),
    };
    let g = setup.g.as_ref().expect("validated");
    let cond = clairaut::clairaut_condition_check(map, g, s.samples, rng)?;
    let sweep = clairaut::geodesic_sweep(map, g, &s.launches, cond.verdict);
    let all_ran = sweep.outcomes.iter().all(|o| o.error.is_none());
    let turning_ok = sweep.max_turning.map_or(true, |t| t <= 1e-3);
    let drift_ok = sweep.max_drift <= tol && all_ran;
    let ok = cond.verdict && drift_ok && turning_ok;
    let mut r = result(
        name,
        tol,
        cond.umbilical.max(sweep.max_drift),
        ok,
        json!({
            "verdict": cond.verdict,
            "umbilical": cond.umbilical,
            "factor1_umbilical": cond.factor1_umbilical,
            "factor2_geodesic": cond.factor2_geodesic,
            "max_drift": sweep.max_drift,
            "max_turning": sweep.max_turning,
            "consistent": sweep.consistent,
            "launches": sweep.outcomes,
        }),
    );
    if !ok {
        let mut why = Vec::new();
        if !cond.verdict {
            why.push(format!("fiber test failed (residual {:e})", cond.umbilical));
        }
        if !drift_ok {
            why.push(format!("invariant drift {:e}", sweep.max_drift));
        }
        if !turning_ok {
            why.push("turning-point relation violated".to_string());
        }
        r.message = Some(why.join("; "));
    }
    Ok(r)
}

fn item_check(
    name: &str,
    item: CurvatureItem,
    tol: f64,
    s: &Scenario,
    setup: &Setup,
    rng: &mut ChaCha8Rng,
) -> Result<CheckResult, GeoError> {
    let map = match setup.map.as_ref() {
        Some(MapKind::Product(p)) => p,
        _ => unreachable!("validated"),
    };
    let zero = ScalarField::constant(0.0);
    let g = setup.g.as_ref().unwrap_or(&zero);
    let points = points_for(s, setup, rng, 3);
    let reports = match curvature::evaluate_at_points(item, map, g, &points) {
        Ok(r) => r,
        Err(e @ (GeoError::NotComputable(_) | GeoError::NoFibers(_))) => {
            return Ok(CheckResult {
                name: name.to_string(),
                status: Status::NotComputable,
                max_residual: f64::NAN,
                tolerance: tol,
                stamps: Vec::new(),
                message: Some(e.to_string()),
                details: Json::Null,
            })
        }
        Err(e) => return Err(e),
    };
    let consistent = curvature::consistent_stamp(&reports);
    let ambiguous_everywhere = reports.iter().all(|r| r.selected.is_none());
    let fixed: Option<Stamp> = match (item.family, item.item) {
        (ItemFamily::Ricci, 2) | (ItemFamily::Ricci, 4) => match s.laplacian {
            LaplacianChoice::Plus => Some(Stamp::Laplacian(LaplacianSign::Plus)),
            LaplacianChoice::Minus => Some(Stamp::Laplacian(LaplacianSign::Minus)),
            LaplacianChoice::Calibrate => consistent,
        },
        (ItemFamily::Sectional, 2) => Some(Stamp::Hat(HatLabel::FactorIntrinsic)),
        (ItemFamily::Sectional, 1 | 3 | 4 | 5) => None,
        _ => Some(Stamp::AsStated),
    };
    let residual_of = |r: &CurvatureReport, stamp: Stamp| r.candidate(stamp).map_or(f64::NAN, |c| c.residual);
    let (worst, ok, message) = match fixed {
        Some(stamp) => {
            let worst = reports.iter().map(|r| residual_of(r, stamp)).fold(0.0, f64::max);
            let stable = consistent.is_some() || ambiguous_everywhere;
            let ok = worst <= tol && stable;
            (worst, ok, (!stable).then(|| "selected stamp changes between points".to_string()))
        }
        None => {
            let worst = reports.iter().map(|r| r.residual).fold(0.0, f64::max);
            let ok = consistent.is_some();
            (worst, ok, (!ok).then(|| "no single orientation is selected at every point".to_string()))
        }
    };
    let mut stamps: Vec<String> = Vec::new();
    if let Some(st) = fixed.or(consistent) {
        stamps.push(st.to_string());
    }
    stamps.push("curvature_sphere_positive".to_string());
    Ok(CheckResult {
        name: name.to_string(),
        status: if ok { Status::Pass } else { Status::Fail },
        max_residual: worst,
        tolerance: tol,
        stamps,
        message,
        details: json!({
            "selected": consistent.map(|s| s.to_string()),
            "reports": reports,
        }),
    })
}

fn fmt_num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:e}")
    } else {
        String::new()
    }
}

/// Trace CSV: `t, x1.., v1.., b, omega, clairaut_invariant`, then residual
/// columns for the requested per-launch checks in request order.
fn write_trace(
    path: &Path,
    data: &LaunchData,
    setup: &Setup,
    checks: &[(String, Check)],
    stride: usize,
) -> Result<(), RunError> {
    let mut out = Vec::new();
    let n = setup.manifold.dim();
    let mut header: Vec<String> = vec!["t".into()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.extend((1..=n).map(|i| format!("v{i}")));
    header.extend(["b", "omega", "clairaut_invariant"].map(String::from));

    let trace = match &data.trace {
        Ok(t) => t,
        Err(e) => {
            writeln!(out, "{}", header.join(",")).ok();
            writeln!(out, "# {e}").ok();
            return fs::write(path, out).map_err(io_err(path));
        }
    };
    let len = trace.len();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for (name, c) in checks {
        match c {
            Check::Case(case) => {
                let (v, h) = match case_of(data, *case) {
                    Ok(r) => (r.vertical, r.horizontal),
                    Err(_) => (vec![f64::NAN; len], vec![f64::NAN; len]),
                };
                header.push(format!("{}_vertical", name.replace([':', '-'], "_")));
                header.push(format!("{}_horizontal", name.replace([':', '-'], "_")));
                columns.push(v);
                columns.push(h);
            }
            Check::AngleIdentity => {
                header.push("angle_identity".into());
                columns.push(match samples_of(data) {
                    Ok(smp) => clairaut::angle_identity(smp, trace).residual,
                    Err(_) => vec![f64::NAN; len],
                });
            }
            Check::AccelerationSplit => {
                header.push("acceleration_split".into());
                let w = setup.product.as_ref().expect("validated");
                columns.push(
                    geodesic::expansion_check(w, trace)
                        .map(|e| e.residual)
                        .unwrap_or_else(|_| vec![f64::NAN; len]),
                );
            }
            _ => {}
        }
    }
    let invariant: Vec<f64> = match (&setup.g, trace.is_decomposed()) {
        (Some(g), true) => clairaut::invariant_series(trace, g)
            .map(|s| s.values)
            .unwrap_or_else(|_| vec![f64::NAN; len]),
        _ => vec![f64::NAN; len],
    };
    writeln!(out, "{}", header.join(",")).ok();
    for k in (0..len).step_by(stride.max(1)) {
        let mut row: Vec<String> = vec![fmt_num(trace.times[k])];
        row.extend(trace.points[k].iter().map(|x| fmt_num(*x)));
        row.extend(trace.velocities[k].iter().map(|x| fmt_num(*x)));
        row.push(fmt_num(trace.speed_sq[k]));
        row.push(trace.omega.get(k).map_or(String::new(), |w| fmt_num(*w)));
        row.push(fmt_num(invariant[k]));
        for c in &columns {
            row.push(c.get(k).map_or(String::new(), |x| fmt_num(*x)));
        }
        writeln!(out, "{}", row.join(",")).ok();
    }
    fs::write(path, out).map_err(io_err(path))
}
