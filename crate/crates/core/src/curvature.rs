//! Riemann, sectional and Ricci curvature from the metric alone, and the
//! closed-form curvature expressions for Riemannian maps between warped
//! products, each compared against that direct computation.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{GeoError, GeoResult};
use crate::manifold::{gram_schmidt, ChartManifold, DomainBox, FdConfig, LaplacianSign, ScalarField};
use crate::rmap::{Frame, ProductRiemannianMap, RiemannianMap, Splitting};
use crate::warped::{Factor, WarpedProduct};

/// `|X ∧ Y|²` below this (relative to `|X|²|Y|²`) is a degenerate plane.
pub const DEGENERATE_PLANE: f64 = 1e-12;
/// Candidates whose residuals differ by less than this are not told apart.
pub const STAMP_TIE: f64 = 1e-6;
pub const CURVATURE_TOLERANCE: f64 = 1e-3;
const TYPE_TOLERANCE: f64 = 1e-6;

/// `R^l_{ijk}`, the components of `R(∂_i, ∂_j)∂_k` with
/// `R(X,Y) = ∇_X∇_Y − ∇_Y∇_X − ∇_[X,Y]`.
#[derive(Debug, Clone)]
pub struct Riemann {
    dim: usize,
    data: Vec<f64>,
}

impl Riemann {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, l: usize, i: usize, j: usize, k: usize) -> f64 {
        let n = self.dim;
        self.data[((l * n + i) * n + j) * n + k]
    }

    /// `R(X, Y)Z`.
    pub fn apply(&self, x: &DVector<f64>, y: &DVector<f64>, z: &DVector<f64>) -> DVector<f64> {
        let n = self.dim;
        DVector::from_fn(n, |l, _| {
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let xy = x[i] * y[j];
                    if xy == 0.0 {
                        continue;
                    }
                    for k in 0..n {
                        s += self.get(l, i, j, k) * xy * z[k];
                    }
                }
            }
            s
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// `R^l_{ijk} = ∂_iΓ^l_{jk} − ∂_jΓ^l_{ik} + Γ^l_{is}Γ^s_{jk} − Γ^l_{js}Γ^s_{ik}`,
/// with the Christoffel derivatives taken by central differences.
pub fn riemann(m: &ChartManifold, p: &[f64]) -> GeoResult<Riemann> {
    m.check_point(p)?;
    let n = m.dim();
    let mut data = vec![0.0; n * n * n * n];
    if n < 2 {
        return Ok(Riemann { dim: n, data });
    }
    let gamma = m.christoffel(p)?;
    let mut q = p.to_vec();
    let mut dgamma = Vec::with_capacity(n);
    for i in 0..n {
        let h = FdConfig::scaled(m.fd().field_step, p[i]);
        q[i] = p[i] + h;
        let gp = m.christoffel_raw(&q)?;
        q[i] = p[i] - h;
        let gm = m.christoffel_raw(&q)?;
        q[i] = p[i];
        dgamma.push((gp, gm, 2.0 * h));
    }
    let d = |i: usize, l: usize, j: usize, k: usize| {
        let (gp, gm, w) = &dgamma[i];
        (gp.get(l, j, k) - gm.get(l, j, k)) / w
    };
    for l in 0..n {
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let mut v = d(i, l, j, k) - d(j, l, i, k);
                    for s in 0..n {
                        v += gamma.get(l, i, s) * gamma.get(s, j, k)
                            - gamma.get(l, j, s) * gamma.get(s, i, k);
                    }
                    data[((l * n + i) * n + j) * n + k] = v;
                }
            }
        }
    }
    Ok(Riemann { dim: n, data })
}

/// Riemann tensor and metric at one point.
#[derive(Debug, Clone)]
pub struct CurvatureAt {
    pub point: Vec<f64>,
    pub metric: DMatrix<f64>,
    pub riemann: Riemann,
}

impl CurvatureAt {
    pub fn compute(m: &ChartManifold, p: &[f64]) -> GeoResult<CurvatureAt> {
        let riemann = riemann(m, p)?;
        Ok(CurvatureAt {
            point: p.to_vec(),
            metric: m.eval_metric(p)?,
            riemann,
        })
    }

    fn inner(&self, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        u.dot(&(&self.metric * v))
    }

    /// `Rm(X, Y, Z, W) = g(R(X,Y)Z, W)`.
    pub fn rm(&self, x: &DVector<f64>, y: &DVector<f64>, z: &DVector<f64>, w: &DVector<f64>) -> f64 {
        self.inner(&self.riemann.apply(x, y, z), w)
    }

    /// `g(R(X,Y)Y, X) / |X ∧ Y|²`; positive on round spheres.
    pub fn sectional(&self, x: &DVector<f64>, y: &DVector<f64>) -> GeoResult<f64> {
        let (xx, yy, xy) = (self.inner(x, x), self.inner(y, y), self.inner(x, y));
        let area = xx * yy - xy * xy;
        if area <= DEGENERATE_PLANE * (xx * yy).max(f64::MIN_POSITIVE) {
            return Err(GeoError::DegeneratePlane(area));
        }
        Ok(self.rm(x, y, y, x) / area)
    }

    /// `Ric(Y, Z) = tr(X ↦ R(X,Y)Z)`.
    pub fn ricci(&self, y: &DVector<f64>, z: &DVector<f64>) -> f64 {
        let n = self.riemann.dim;
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    s += self.riemann.get(i, i, j, k) * y[j] * z[k];
                }
            }
        }
        s
    }

    pub fn ricci_matrix(&self) -> DMatrix<f64> {
        let n = self.riemann.dim;
        DMatrix::from_fn(n, n, |j, k| (0..n).map(|i| self.riemann.get(i, i, j, k)).sum())
    }

    pub fn scalar(&self) -> GeoResult<f64> {
        let n = self.riemann.dim;
        if n == 0 {
            return Ok(0.0);
        }
        let ginv = self
            .metric
            .clone()
            .cholesky()
            .map(|c| c.inverse())
            .ok_or_else(|| GeoError::SingularMetric {
                manifold: "curvature".into(),
                point: self.point.clone(),
            })?;
        Ok(ginv.component_mul(&self.ricci_matrix()).sum())
    }
}

pub fn sectional(m: &ChartManifold, p: &[f64], x: &DVector<f64>, y: &DVector<f64>) -> GeoResult<f64> {
    CurvatureAt::compute(m, p)?.sectional(x, y)
}

pub fn ricci(m: &ChartManifold, p: &[f64], x: &DVector<f64>, y: &DVector<f64>) -> GeoResult<f64> {
    Ok(CurvatureAt::compute(m, p)?.ricci(x, y))
}

/// Residuals of the algebraic identities of the curvature tensor, each
/// divided by `max(1, max |Rm|)`.
#[derive(Debug, Clone, Serialize)]
pub struct SymmetryReport {
    pub point: Vec<f64>,
    pub scale: f64,
    /// `Rm(X,Y,Z,W) + Rm(Y,X,Z,W)`
    pub first_pair: f64,
    /// `Rm(X,Y,Z,W) + Rm(X,Y,W,Z)`
    pub second_pair: f64,
    /// `Rm(X,Y,Z,W) − Rm(Z,W,X,Y)`
    pub pair_exchange: f64,
    /// `R(X,Y)Z + R(Y,Z)X + R(Z,X)Y`
    pub bianchi: f64,
}

impl SymmetryReport {
    pub fn max(&self) -> f64 {
        self.first_pair
            .max(self.second_pair)
            .max(self.pair_exchange)
            .max(self.bianchi)
    }
}

pub fn bianchi_and_symmetry_check(m: &ChartManifold, p: &[f64]) -> GeoResult<SymmetryReport> {
    let c = CurvatureAt::compute(m, p)?;
    let n = m.dim();
    let r = &c.riemann;
    // lowered[(w, i, j, k)] = g_{wl} R^l_{ijk} = Rm(∂i, ∂j, ∂k, ∂w)
    let idx = |w: usize, i: usize, j: usize, k: usize| ((w * n + i) * n + j) * n + k;
    let mut lowered = vec![0.0; n * n * n * n];
    for w in 0..n {
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    lowered[idx(w, i, j, k)] =
                        (0..n).map(|l| c.metric[(w, l)] * r.get(l, i, j, k)).sum();
                }
            }
        }
    }
    let scale = lowered.iter().fold(1.0_f64, |m, x| m.max(x.abs()));
    let mut rep = SymmetryReport {
        point: p.to_vec(),
        scale,
        first_pair: 0.0,
        second_pair: 0.0,
        pair_exchange: 0.0,
        bianchi: 0.0,
    };
    let rm = |i: usize, j: usize, k: usize, w: usize| lowered[idx(w, i, j, k)];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for w in 0..n {
                    let v = rm(i, j, k, w);
                    rep.first_pair = rep.first_pair.max((v + rm(j, i, k, w)).abs());
                    rep.second_pair = rep.second_pair.max((v + rm(i, j, w, k)).abs());
                    rep.pair_exchange = rep.pair_exchange.max((v - rm(k, w, i, j)).abs());
                    let b = v + rm(j, k, i, w) + rm(k, i, j, w);
                    rep.bianchi = rep.bianchi.max(b.abs());
                }
            }
        }
    }
    rep.first_pair /= scale;
    rep.second_pair /= scale;
    rep.pair_exchange /= scale;
    rep.bianchi /= scale;
    Ok(rep)
}

/// The fiber of `map` through `p` as a manifold in its own right, when the
/// vertical space is spanned by coordinate directions. Returns the chart
/// and the coordinates it keeps.
pub fn fiber_chart(map: &RiemannianMap, p: &[f64]) -> GeoResult<(ChartManifold, Vec<usize>)> {
    let frame = map.frame(p)?;
    let n = p.len();
    let scale = frame
        .vertical
        .iter()
        .fold(0.0_f64, |m, e| m.max(e.amax()));
    let keep: Vec<usize> = (0..n)
        .filter(|&k| frame.vertical.iter().any(|e| e[k].abs() > 1e-7 * scale))
        .collect();
    if frame.vertical.is_empty() {
        return Err(GeoError::NoFibers(map.name().to_string()));
    }
    if keep.len() != frame.vertical.len() {
        return Err(GeoError::NotComputable(format!(
            "fibers of {} are not coordinate slices at {:?}",
            map.name(),
            p
        )));
    }
    let source = map.source().clone();
    let domain = DomainBox::new(
        keep.iter().map(|&k| source.domain().lower()[k]).collect(),
        keep.iter().map(|&k| source.domain().upper()[k]).collect(),
    )?;
    let anchor = p.to_vec();
    let cols = keep.clone();
    let fd = source.fd();
    let chart = ChartManifold::new("fiber", domain, move |x| {
        let mut q = anchor.clone();
        for (a, &k) in cols.iter().enumerate() {
            q[k] = x[a];
        }
        let g = source.metric_raw(&q)?;
        Ok(DMatrix::from_fn(cols.len(), cols.len(), |a, b| g[(cols[a], cols[b])]))
    })
    .with_fd(fd);
    Ok((chart, keep))
}

fn restrict(v: &DVector<f64>, keep: &[usize]) -> DVector<f64> {
    DVector::from_iterator(keep.len(), keep.iter().map(|&k| v[k]))
}

/// `(∇_E A)_Y Z` for a map `ψ` at `q`, with `Y` and `Z` extended by
/// constant coefficients. The outer derivative uses `outer_step`.
pub fn nabla_tensor_a(
    psi: &RiemannianMap,
    s: &Splitting,
    q: &[f64],
    e: &DVector<f64>,
    y: &DVector<f64>,
    z: &DVector<f64>,
) -> GeoResult<DVector<f64>> {
    let step = psi.source().fd().outer_step;
    let outer = crate::manifold::directional(q, e, step, &|r| Ok(psi.splitting(r)?.tensor_a(y, z)))?;
    let gamma = &s.christoffel;
    Ok(outer + gamma.contract(e, &s.tensor_a(y, z))
        - s.tensor_a(&gamma.contract(e, y), z)
        - s.tensor_a(y, &gamma.contract(e, z)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CurvatureSign {
    /// `sec = g(R(X,Y)Y, X) / |X ∧ Y|²`, `+1` on the unit sphere.
    SpherePositive,
}

/// How the second-fundamental-form terms enter a sectional-curvature
/// expression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    /// Signs exactly as the closed form is written.
    Literal,
    /// Signs of the Gauss equation under the sphere-positive convention.
    Gauss,
}

/// Which curvature a hatted factor term stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HatLabel {
    /// Curvature of the factor with its own metric.
    FactorIntrinsic,
    /// Curvature of the fiber with the metric induced from the product.
    FiberInduced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stamp {
    AsStated,
    Laplacian(LaplacianSign),
    Orientation(Orientation),
    Hat(HatLabel),
}

impl fmt::Display for Stamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stamp::AsStated => write!(f, "as_stated"),
            Stamp::Laplacian(LaplacianSign::Plus) => write!(f, "laplacian_plus"),
            Stamp::Laplacian(LaplacianSign::Minus) => write!(f, "laplacian_minus"),
            Stamp::Orientation(Orientation::Literal) => write!(f, "literal"),
            Stamp::Orientation(Orientation::Gauss) => write!(f, "gauss"),
            Stamp::Hat(HatLabel::FactorIntrinsic) => write!(f, "factor_intrinsic"),
            Stamp::Hat(HatLabel::FiberInduced) => write!(f, "fiber_induced"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemFamily {
    /// Ricci curvature items.
    Ricci,
    /// Sectional curvature items.
    Sectional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct CurvatureItem {
    pub family: ItemFamily,
    pub item: u8,
}

impl CurvatureItem {
    pub fn new(family: ItemFamily, item: u8) -> GeoResult<CurvatureItem> {
        let max = match family {
            ItemFamily::Ricci => 4,
            ItemFamily::Sectional => 6,
        };
        if item == 0 || item > max {
            return Err(GeoError::InvalidInput(format!(
                "{family:?} items run from 1 to {max}, got {item}"
            )));
        }
        Ok(CurvatureItem { family, item })
    }

    fn kinds(self) -> (Kind, Kind) {
        use Kind::*;
        match (self.family, self.item) {
            (ItemFamily::Sectional, 1) | (ItemFamily::Ricci, 1) => (Vertical, Vertical),
            (ItemFamily::Sectional, 2) | (ItemFamily::Ricci, 2) => (FiberVertical, FiberVertical),
            (ItemFamily::Sectional, 3) | (ItemFamily::Ricci, 3) => (BaseHorizontal, BaseHorizontal),
            (ItemFamily::Sectional, 4) => (Vertical, Horizontal),
            (ItemFamily::Sectional, 5) | (ItemFamily::Ricci, 4) => (FiberHorizontal, FiberHorizontal),
            _ => (FiberVertical, FiberHorizontal),
        }
    }
}

impl fmt::Display for CurvatureItem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.family {
            ItemFamily::Ricci => write!(f, "ricci:item{}", self.item),
            ItemFamily::Sectional => write!(f, "sectional:item{}", self.item),
        }
    }
}

/// What kind of tangent vector an item expects.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    /// In the kernel of the whole map.
    Vertical,
    /// Orthogonal to the kernel of the whole map.
    Horizontal,
    /// Lift of a base vector horizontal for the first factor map.
    BaseHorizontal,
    /// Lift of a fiber vector vertical for the second factor map.
    FiberVertical,
    /// Lift of a fiber vector horizontal for the second factor map.
    FiberHorizontal,
}

#[derive(Debug, Clone, Serialize)]
pub struct Candidate {
    pub stamp: Stamp,
    pub closed_form: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CurvatureReport {
    pub item: String,
    pub map: String,
    pub point: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
    pub curvature_sign: CurvatureSign,
    /// Direct computation from the metric of the source.
    pub oracle: f64,
    pub candidates: Vec<Candidate>,
    /// Best-matching candidate; `None` when two candidates tie.
    pub selected: Option<Stamp>,
    /// Residual of the best candidate.
    pub residual: f64,
    pub notes: Vec<String>,
}

impl CurvatureReport {
    pub fn candidate(&self, stamp: Stamp) -> Option<&Candidate> {
        self.candidates.iter().find(|c| c.stamp == stamp)
    }

    pub fn best(&self) -> &Candidate {
        self.candidates
            .iter()
            .min_by(|a, b| a.residual.total_cmp(&b.residual))
            .expect("at least one candidate")
    }

    pub fn passed(&self, tolerance: f64) -> bool {
        self.residual <= tolerance
    }
}

/// Everything an item evaluator needs at one point.
struct Site<'a> {
    map: &'a ProductRiemannianMap,
    w: &'a WarpedProduct,
    p: &'a [f64],
    p1: &'a [f64],
    p2: &'a [f64],
    frame: Frame,
    f: f64,
    grad_f_sq: f64,
}

impl<'a> Site<'a> {
    fn new(map: &'a ProductRiemannianMap, p: &'a [f64]) -> GeoResult<Site<'a>> {
        let w = map.source();
        w.manifold().check_point(p)?;
        let (p1, p2) = w.split_point(p);
        Ok(Site {
            map,
            w,
            p,
            p1,
            p2,
            frame: map.frame(p)?,
            f: w.warp_at(p)?,
            grad_f_sq: w.warp_gradient_norm_sq(p)?,
        })
    }

    fn m(&self) -> &ChartManifold {
        self.w.manifold()
    }

    fn factor_point(&self, factor: Factor) -> &[f64] {
        match factor {
            Factor::Base => self.p1,
            Factor::Fiber => self.p2,
        }
    }

    /// Factor component of a lift; errors if the other block is not zero.
    fn component(&self, factor: Factor, v: &DVector<f64>) -> GeoResult<DVector<f64>> {
        let (v1, v2) = self.w.split(v);
        let (keep, other) = match factor {
            Factor::Base => (v1, v2),
            Factor::Fiber => (v2, v1),
        };
        if other.amax() > 1e-12 * v.amax().max(1.0) {
            return Err(GeoError::InvalidInput(format!(
                "vector {:?} is not a lift from the {factor:?} factor",
                v.as_slice()
            )));
        }
        Ok(keep)
    }

    fn check_kind(&self, kind: Kind, v: &DVector<f64>) -> GeoResult<()> {
        let (frame, u) = match kind {
            Kind::Vertical | Kind::Horizontal => (self.frame.clone(), v.clone()),
            Kind::BaseHorizontal => (
                self.map.factor1().frame(self.p1)?,
                self.component(Factor::Base, v)?,
            ),
            Kind::FiberVertical | Kind::FiberHorizontal => (
                self.map.factor2().frame(self.p2)?,
                self.component(Factor::Fiber, v)?,
            ),
        };
        let off = match kind {
            Kind::Vertical | Kind::FiberVertical => frame.horizontal_part(&u),
            _ => frame.vertical_part(&u),
        };
        if frame.norm(&off) > TYPE_TOLERANCE * frame.norm(&u).max(1e-300) {
            return Err(GeoError::InvalidInput(format!(
                "vector {:?} is not of the expected kind ({kind:?})",
                v.as_slice()
            )));
        }
        Ok(())
    }

    fn basis(&self, kind: Kind) -> GeoResult<Vec<DVector<f64>>> {
        Ok(match kind {
            Kind::Vertical => self.frame.vertical.clone(),
            Kind::Horizontal => self.frame.horizontal.clone(),
            Kind::BaseHorizontal => self
                .map
                .factor1()
                .frame(self.p1)?
                .horizontal
                .iter()
                .map(|e| self.w.lift(Factor::Base, e))
                .collect(),
            Kind::FiberVertical => self
                .map
                .factor2()
                .frame(self.p2)?
                .vertical
                .iter()
                .map(|e| self.w.lift(Factor::Fiber, e))
                .collect(),
            Kind::FiberHorizontal => self
                .map
                .factor2()
                .frame(self.p2)?
                .horizontal
                .iter()
                .map(|e| self.w.lift(Factor::Fiber, e))
                .collect(),
        })
    }

    fn unit(&self, v: &DVector<f64>) -> GeoResult<DVector<f64>> {
        let n = self.m().norm(self.p, v)?;
        if n <= 1e-300 {
            return Err(GeoError::InvalidInput("zero vector".into()));
        }
        Ok(v / n)
    }

    /// Scalar field on `M` given by `h` on the base.
    fn on_product(&self, h: &ScalarField) -> ScalarField {
        let m1 = self.w.base().dim();
        h.compose(h.label().to_string(), move |p| p[..m1].to_vec())
    }

    fn hessian_f(&self, x: &DVector<f64>, y: &DVector<f64>) -> GeoResult<f64> {
        self.m().hessian(&self.on_product(self.w.warp()), x, y, self.p)
    }

    /// `Δf / f` on the base under `sign`.
    fn laplacian_term(&self, sign: LaplacianSign) -> GeoResult<f64> {
        Ok(self.w.base().laplacian(self.w.warp(), self.p1, sign)? / self.f)
    }
}

/// Unit vectors of the kinds an item expects, taken from the frames at `p`.
/// Ricci items get the same vector twice.
pub fn default_vectors(
    item: CurvatureItem,
    map: &ProductRiemannianMap,
    p: &[f64],
) -> GeoResult<(DVector<f64>, DVector<f64>)> {
    let site = Site::new(map, p)?;
    let (ka, kb) = item.kinds();
    let missing = |kind: Kind| {
        GeoError::NotComputable(format!("{item} needs {kind:?} vectors that {} lacks at {p:?}", map.name()))
    };
    let a = site.basis(ka)?;
    let first = site.unit(a.first().ok_or_else(|| missing(ka))?)?;
    if item.family == ItemFamily::Ricci {
        return Ok((first.clone(), first));
    }
    let second = if ka == kb {
        a.get(1).ok_or_else(|| missing(kb))?.clone()
    } else {
        site.basis(kb)?.first().ok_or_else(|| missing(kb))?.clone()
    };
    Ok((first, site.unit(&second)?))
}

/// Evaluate one curvature item at `p` on the vectors `x`, `y` (product
/// coordinates). `g` is the exponent used by the items that involve it.
pub fn evaluate_item(
    item: CurvatureItem,
    map: &ProductRiemannianMap,
    g: &ScalarField,
    p: &[f64],
    x: &DVector<f64>,
    y: &DVector<f64>,
) -> GeoResult<CurvatureReport> {
    let site = Site::new(map, p)?;
    let (ka, kb) = item.kinds();
    site.check_kind(ka, x)?;
    site.check_kind(kb, y)?;
    let m = site.m();
    let oracle_at = CurvatureAt::compute(m, p)?;
    let (x, y, oracle) = match item.family {
        ItemFamily::Sectional => {
            let gm = m.eval_metric(p)?;
            let on = gram_schmidt(&gm, &[x.clone(), y.clone()]);
            if on.len() < 2 {
                return Err(GeoError::DegeneratePlane(0.0));
            }
            let (x, y) = (on[0].clone(), on[1].clone());
            let oracle = oracle_at.sectional(&x, &y)?;
            (x, y, oracle)
        }
        ItemFamily::Ricci => {
            let (x, y) = (site.unit(x)?, site.unit(y)?);
            let oracle = oracle_at.ricci(&x, &y);
            (x, y, oracle)
        }
    };
    let mut notes = Vec::new();
    let candidates = match (item.family, item.item) {
        (ItemFamily::Sectional, 1) => sec_vertical(&site, g, &x, &y, &mut notes)?,
        (ItemFamily::Sectional, 2) => sec_fiber_vertical(&site, &x, &y)?,
        (ItemFamily::Sectional, 3) => sec_factor_horizontal(&site, Factor::Base, &x, &y, &mut notes)?,
        (ItemFamily::Sectional, 4) => sec_mixed(&site, g, &x, &y)?,
        (ItemFamily::Sectional, 5) => sec_factor_horizontal(&site, Factor::Fiber, &x, &y, &mut notes)?,
        (ItemFamily::Sectional, 6) => sec_fiber_mixed(&site, &x, &y)?,
        (ItemFamily::Ricci, 1) => ric_vertical(&site, g, &x, &y, &mut notes)?,
        (ItemFamily::Ricci, 2) => ric_fiber_vertical(&site, &x, &y)?,
        (ItemFamily::Ricci, 3) => ric_base_horizontal(&site, g, &x, &y)?,
        (ItemFamily::Ricci, 4) => ric_fiber_horizontal(&site, &x, &y)?,
        _ => unreachable!("item range checked on construction"),
    };
    Ok(finish(item, map, p, [&x, &y], oracle, candidates, notes))
}

fn finish(
    item: CurvatureItem,
    map: &ProductRiemannianMap,
    p: &[f64],
    vectors: [&DVector<f64>; 2],
    oracle: f64,
    values: Vec<(Stamp, f64)>,
    notes: Vec<String>,
) -> CurvatureReport {
    let candidates: Vec<Candidate> = values
        .into_iter()
        .map(|(stamp, v)| Candidate {
            stamp,
            closed_form: v,
            residual: (v - oracle).abs(),
        })
        .collect();
    let mut order: Vec<&Candidate> = candidates.iter().collect();
    order.sort_by(|a, b| a.residual.total_cmp(&b.residual));
    let residual = order[0].residual;
    let selected = match order.get(1) {
        Some(next) if next.residual - residual <= STAMP_TIE => None,
        _ => Some(order[0].stamp),
    };
    CurvatureReport {
        item: item.to_string(),
        map: map.name().to_string(),
        point: p.to_vec(),
        vectors: vectors.iter().map(|v| v.as_slice().to_vec()).collect(),
        curvature_sign: CurvatureSign::SpherePositive,
        oracle,
        candidates,
        selected,
        residual,
        notes,
    }
}

fn orientation_pair(literal: f64, gauss: f64) -> Vec<(Stamp, f64)> {
    vec![
        (Stamp::Orientation(Orientation::Literal), literal),
        (Stamp::Orientation(Orientation::Gauss), gauss),
    ]
}

fn laplacian_pair(site: &Site, value: impl Fn(f64) -> f64) -> GeoResult<Vec<(Stamp, f64)>> {
    [LaplacianSign::Plus, LaplacianSign::Minus]
        .into_iter()
        .map(|s| Ok((Stamp::Laplacian(s), value(site.laplacian_term(s)?))))
        .collect()
}

fn grad_sq(site: &Site, g: &ScalarField) -> GeoResult<f64> {
    let grad = site.m().gradient(g, site.p)?;
    site.m().inner(site.p, &grad, &grad)
}

/// Intrinsic curvature of the whole-map fiber: sectional on a plane or Ricci.
fn fiber_curvature(
    site: &Site,
    x: &DVector<f64>,
    y: &DVector<f64>,
    sectional: bool,
    notes: &mut Vec<String>,
) -> GeoResult<f64> {
    let (chart, keep) = fiber_chart(site.map.whole(), site.p)?;
    notes.push(format!(
        "fiber chart on coordinates {:?}",
        keep.iter().map(|k| k + 1).collect::<Vec<_>>()
    ));
    let q = restrict(&DVector::from_column_slice(site.p), &keep);
    let c = CurvatureAt::compute(&chart, q.as_slice())?;
    let (xs, ys) = (restrict(x, &keep), restrict(y, &keep));
    if sectional {
        if chart.dim() < 2 {
            return Err(GeoError::NotComputable("fibers are one-dimensional".into()));
        }
        c.sectional(&xs, &ys)
    } else {
        Ok(c.ricci(&xs, &ys))
    }
}

fn sec_vertical(
    site: &Site,
    g: &ScalarField,
    x: &DVector<f64>,
    y: &DVector<f64>,
    notes: &mut Vec<String>,
) -> GeoResult<Vec<(Stamp, f64)>> {
    let hat = fiber_curvature(site, x, y, true, notes)?;
    let g2 = grad_sq(site, g)?;
    Ok(orientation_pair(hat + g2, hat - g2))
}

fn sec_fiber_vertical(site: &Site, x: &DVector<f64>, y: &DVector<f64>) -> GeoResult<Vec<(Stamp, f64)>> {
    let (x2, y2) = (site.component(Factor::Fiber, x)?, site.component(Factor::Fiber, y)?);
    let k2 = sectional(site.w.fiber(), site.p2, &x2, &y2)?;
    let (f, grad) = (site.f, site.grad_f_sq);
    Ok(vec![
        (Stamp::Hat(HatLabel::FactorIntrinsic), (k2 - grad) / (f * f)),
        (Stamp::Hat(HatLabel::FiberInduced), (k2 / (f * f) - grad) / (f * f)),
    ])
}

/// Pieces of the factor-map terms for a pair of lifts from one factor.
struct FactorTerms {
    /// `Rm^N(φ_*x, φ_*y, φ_*y, φ_*x)`
    rm: f64,
    /// `g_N(B(x,x), B(y,y))`
    bb: f64,
    /// `|B(x,y)|²`
    bxy: f64,
}

fn factor_terms(site: &Site, factor: Factor, x: &DVector<f64>, y: &DVector<f64>) -> GeoResult<FactorTerms> {
    let psi = site.map.factor(factor);
    let q = site.factor_point(factor);
    let (xf, yf) = (site.component(factor, x)?, site.component(factor, y)?);
    let jac = psi.jacobian(q)?;
    let image = psi.apply(q)?;
    let n = psi.target();
    let gn = n.eval_metric(image.as_slice())?;
    let (jx, jy) = (&jac * &xf, &jac * &yf);
    let rm = if n.dim() >= 2 {
        CurvatureAt::compute(n, image.as_slice())?.rm(&jx, &jy, &jy, &jx)
    } else {
        0.0
    };
    let bxx = psi.second_fundamental_form(q, &xf, &xf)?;
    let byy = psi.second_fundamental_form(q, &yf, &yf)?;
    let bxy = psi.second_fundamental_form(q, &xf, &yf)?;
    Ok(FactorTerms {
        rm,
        bb: bxx.dot(&(&gn * &byy)),
        bxy: bxy.dot(&(&gn * &bxy)),
    })
}

fn area(site: &Site, x: &DVector<f64>, y: &DVector<f64>) -> GeoResult<f64> {
    let m = site.m();
    let (xx, yy, xy) = (m.inner(site.p, x, x)?, m.inner(site.p, y, y)?, m.inner(site.p, x, y)?);
    Ok(xx * yy - xy * xy)
}

fn sec_factor_horizontal(
    site: &Site,
    factor: Factor,
    x: &DVector<f64>,
    y: &DVector<f64>,
    notes: &mut Vec<String>,
) -> GeoResult<Vec<(Stamp, f64)>> {
    let t = factor_terms(site, factor, x, y)?;
    let warp = match factor {
        Factor::Base => 0.0,
        Factor::Fiber => {
            if (site.f - 1.0).abs() > 1e-12 {
                notes.push("factor terms use the fiber components as given".into());
            }
            site.grad_f_sq / (site.f * site.f)
        }
    };
    let den = area(site, x, y)?;
    Ok(orientation_pair(
        (t.rm - t.bb + t.bxy - warp) / den,
        (t.rm + t.bb - t.bxy - warp) / den,
    ))
}

fn sec_mixed(site: &Site, g: &ScalarField, u: &DVector<f64>, y: &DVector<f64>) -> GeoResult<Vec<(Stamp, f64)>> {
    let m = site.m();
    let p = site.p;
    let uu = m.inner(p, u, u)?;
    let yyn = m.inner(p, y, y)?;
    let hess = m.hessian(g, y, y, p)?;
    let yg = g.partials(p, m.fd().step)?.dot(y);
    let s = site.map.splitting(p)?;
    let a = s.tensor_a(y, u);
    let num = uu * hess + yg * yg * uu - m.inner(p, &a, &a)?;
    let den = uu * yyn;
    Ok(orientation_pair(num / den, -num / den))
}

fn sec_fiber_mixed(site: &Site, u: &DVector<f64>, y: &DVector<f64>) -> GeoResult<Vec<(Stamp, f64)>> {
    let m = site.m();
    let p = site.p;
    let s = site.map.splitting(p)?;
    let a = s.tensor_a(y, u);
    let an = m.inner(p, &a, &a)?;
    let den = site.f * site.f * m.inner(p, u, u)? * m.inner(p, y, y)?;
    Ok(vec![(Stamp::AsStated, -(an + site.grad_f_sq) / den)])
}

/// `Σ g(A_e X, A_e Y)` over `frame` for the whole map.
fn a_sum(s: &Splitting, frame: &[DVector<f64>], x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    frame
        .iter()
        .map(|e| s.frame.inner(&s.tensor_a(e, x), &s.tensor_a(e, y)))
        .sum()
}

fn ric_vertical(
    site: &Site,
    g: &ScalarField,
    x: &DVector<f64>,
    y: &DVector<f64>,
    notes: &mut Vec<String>,
) -> GeoResult<Vec<(Stamp, f64)>> {
    let hat = fiber_curvature(site, x, y, false, notes)?;
    let m = site.m();
    let (m1, n1, m2) = (
        site.w.base().dim() as f64,
        site.map.factor1().target().dim() as f64,
        site.w.fiber().dim() as f64,
    );
    let (x1, _) = site.w.split(x);
    let (y1, _) = site.w.split(y);
    let gb = site.w.base().inner(site.p1, &x1, &y1)?;
    let div_grad = m.laplacian(g, site.p, LaplacianSign::Plus)?;
    let s = site.map.splitting(site.p)?;
    let a = a_sum(&s, &s.frame.horizontal, x, y);
    let v = hat - (m1 - n1) * grad_sq(site, g)? * gb - gb * div_grad + a
        - (m2 / site.f) * site.hessian_f(x, y)?;
    Ok(vec![(Stamp::AsStated, v)])
}

fn ric_fiber_vertical(site: &Site, x: &DVector<f64>, y: &DVector<f64>) -> GeoResult<Vec<(Stamp, f64)>> {
    let (x2, y2) = (site.component(Factor::Fiber, x)?, site.component(Factor::Fiber, y)?);
    let ric2 = ricci(site.w.fiber(), site.p2, &x2, &y2)?;
    let s = site.map.splitting(site.p)?;
    let lifted: Vec<DVector<f64>> = site
        .map
        .factor2()
        .frame(site.p2)?
        .horizontal
        .iter()
        .map(|e| site.w.lift(Factor::Fiber, e) / site.f)
        .collect();
    let a = a_sum(&s, &lifted, x, y);
    let gxy = site.m().inner(site.p, x, y)?;
    let m2 = site.w.fiber().dim() as f64;
    let warp = (m2 - 1.0) * site.grad_f_sq / (site.f * site.f);
    laplacian_pair(site, |lap| ric2 + a + (lap - warp) * gxy)
}

/// The factor-map part shared by the horizontal Ricci items, computed on
/// the factor manifold with its own metric.
fn factor_ricci_terms(site: &Site, factor: Factor, x: &DVector<f64>, y: &DVector<f64>) -> GeoResult<f64> {
    let psi = site.map.factor(factor);
    let q = site.factor_point(factor);
    let (xf, yf) = (site.component(factor, x)?, site.component(factor, y)?);
    let s = psi.splitting(q)?;
    if s.frame.horizontal.len() != psi.target().dim() {
        return Err(GeoError::NotComputable(format!(
            "the range of {} is a proper subspace; its Ricci curvature is not defined here",
            psi.name()
        )));
    }
    let jac = psi.jacobian(q)?;
    let image = psi.apply(q)?;
    let n = psi.target();
    let gn = n.eval_metric(image.as_slice())?;
    let ric_range = if n.dim() >= 2 {
        CurvatureAt::compute(n, image.as_slice())?.ricci(&(&jac * &xf), &(&jac * &yf))
    } else {
        0.0
    };
    let mut total = ric_range;
    for e in &s.frame.vertical {
        let da = nabla_tensor_a(psi, &s, q, e, &xf, &yf)?;
        total += s.frame.inner(&da, e);
        total -= s.frame.inner(&s.tensor_t(e, &xf), &s.tensor_t(e, &yf));
        total += s.frame.inner(&s.tensor_a(&xf, e), &s.tensor_a(&yf, e));
    }
    let tau = psi.tension(q)?;
    total += psi.second_fundamental_form(q, &xf, &yf)?.dot(&(&gn * tau));
    for e in &s.frame.horizontal {
        let bx = psi.second_fundamental_form(q, &xf, e)?;
        let by = psi.second_fundamental_form(q, &yf, e)?;
        total -= bx.dot(&(&gn * by));
    }
    Ok(total)
}

fn ric_base_horizontal(
    site: &Site,
    g: &ScalarField,
    x: &DVector<f64>,
    y: &DVector<f64>,
) -> GeoResult<Vec<(Stamp, f64)>> {
    let shared = factor_ricci_terms(site, Factor::Base, x, y)?;
    let (m1, n1, m2) = (
        site.w.base().dim() as f64,
        site.map.factor1().target().dim() as f64,
        site.w.fiber().dim() as f64,
    );
    let hg = site.m().hessian(g, x, y, site.p)?;
    let v = shared - (m1 - n1) * hg - (m2 / site.f) * site.hessian_f(x, y)?;
    Ok(vec![(Stamp::AsStated, v)])
}

fn ric_fiber_horizontal(site: &Site, x: &DVector<f64>, y: &DVector<f64>) -> GeoResult<Vec<(Stamp, f64)>> {
    let shared = factor_ricci_terms(site, Factor::Fiber, x, y)?;
    let gxy = site.m().inner(site.p, x, y)?;
    let m2 = site.w.fiber().dim() as f64;
    let warp = (m2 - 1.0) * site.grad_f_sq / (site.f * site.f);
    laplacian_pair(site, |lap| shared + (lap - warp) * gxy)
}

/// Evaluate an item on its default vectors at each point and report the
/// stamps that were selected (ties are skipped).
pub fn evaluate_at_points(
    item: CurvatureItem,
    map: &ProductRiemannianMap,
    g: &ScalarField,
    points: &[Vec<f64>],
) -> GeoResult<Vec<CurvatureReport>> {
    points
        .iter()
        .map(|p| {
            let (x, y) = default_vectors(item, map, p)?;
            evaluate_item(item, map, g, p, &x, &y)
        })
        .collect()
}

/// The single stamp selected across `reports`, if they agree.
pub fn consistent_stamp(reports: &[CurvatureReport]) -> Option<Stamp> {
    let mut chosen: Option<Stamp> = None;
    for r in reports {
        if let Some(s) = r.selected {
            match chosen {
                None => chosen = Some(s),
                Some(c) if c != s => return None,
                _ => {}
            }
        }
    }
    chosen
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use std::f64::consts::PI;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn sphere_and_plane() {
        let s = catalog::sphere2();
        let k = sectional(&s, &[1.0, 0.3], &v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap();
        assert!((k - 1.0).abs() < 1e-5, "{k}");
        let h = catalog::hyperbolic2();
        let k = sectional(&h, &[0.2, 1.7], &v(&[1.0, 0.3]), &v(&[0.0, 1.0])).unwrap();
        assert!((k + 1.0).abs() < 1e-5, "{k}");
        let p = catalog::polar2();
        let k = sectional(&p, &[2.0, 0.5], &v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap();
        assert!(k.abs() < 1e-5, "{k}");
    }

    #[test]
    fn degenerate_plane() {
        let s = catalog::sphere2();
        assert!(matches!(
            sectional(&s, &[1.0, 0.0], &v(&[1.0, 2.0]), &v(&[2.0, 4.0])),
            Err(GeoError::DegeneratePlane(_))
        ));
    }

    #[test]
    fn h3_ricci_and_symmetries() {
        let m = catalog::h3_model();
        let p = [0.4, -1.0, 2.0];
        let c = CurvatureAt::compute(m.manifold(), &p).unwrap();
        let e = (-0.4_f64).exp();
        let u = v(&[0.0, e, 0.0]);
        assert!((c.ricci(&u, &u) + 2.0).abs() < 1e-5);
        assert!((c.scalar().unwrap() + 6.0).abs() < 1e-4);
        let r = bianchi_and_symmetry_check(m.manifold(), &p).unwrap();
        assert!(r.max() < 1e-6, "{r:?}");
        let r = bianchi_and_symmetry_check(&catalog::heisenberg3(), &[0.3, 0.1, 0.2]).unwrap();
        assert!(r.max() < 1e-6, "{r:?}");
    }

    #[test]
    fn heisenberg_vertical_plane() {
        // sec(X, Z) = 1/4 for the left-invariant frame of the Heisenberg group
        let h = catalog::heisenberg3();
        let k = sectional(&h, &[0.0, 0.0, 0.0], &v(&[1.0, 0.0, 0.0]), &v(&[0.0, 0.0, 1.0])).unwrap();
        assert!((k - 0.25).abs() < 1e-5, "{k}");
        let k = sectional(&h, &[0.0, 0.0, 0.0], &v(&[1.0, 0.0, 0.0]), &v(&[0.0, 1.0, 0.0])).unwrap();
        assert!((k + 0.75).abs() < 1e-5, "{k}");
    }

    #[test]
    fn fiber_chart_of_projection() {
        let pi = ProductRiemannianMap::pi1(&catalog::h3_model());
        let (chart, keep) = fiber_chart(pi.whole(), &[0.5, 0.0, 0.0]).unwrap();
        assert_eq!(keep, vec![1, 2]);
        assert_eq!(chart.dim(), 2);
        let g = chart.eval_metric(&[0.0, 0.0]).unwrap();
        assert!((g[(0, 0)] - 1.0_f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn sphere_ricci_items_use_minus_laplacian() {
        let w = catalog::sphere_model();
        let pi = ProductRiemannianMap::identity(&w);
        let g = crate::clairaut::auto_exponent(&pi);
        let item = CurvatureItem::new(ItemFamily::Ricci, 4).unwrap();
        let r = evaluate_at_points(item, &pi, &g, &[vec![1.0, 0.0], vec![PI / 3.0, 2.0]]).unwrap();
        for rep in &r {
            assert_eq!(rep.selected, Some(Stamp::Laplacian(LaplacianSign::Minus)), "{rep:?}");
            assert!(rep.residual < 1e-4, "{rep:?}");
        }
    }
}
