//! Single-chart Riemannian manifolds and finite-difference calculus on them.
//!
//! Every derivative here is a central difference. Metric derivatives use
//! `FdConfig::step` (relative, default 1e-5). Derivatives of vector fields
//! and second derivatives of scalars use the coarser `field_step` (1e-4),
//! since those inputs often carry finite-difference noise of their own.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use crate::error::{GeoError, GeoResult};
use crate::expr::Expr;

pub type MetricFn = Arc<dyn Fn(&[f64]) -> GeoResult<DMatrix<f64>> + Send + Sync>;

/// Finite-difference step sizes, relative to `max(1, |coordinate|)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FdConfig {
    /// First derivatives of the metric and of scalar fields.
    pub step: f64,
    /// Derivatives of vector fields, second derivatives of scalars, and
    /// derivatives of Christoffel symbols.
    pub field_step: f64,
    /// Derivatives of quantities that are already second-level differences
    /// (covariant derivatives of the O'Neill tensors).
    pub outer_step: f64,
}

impl Default for FdConfig {
    fn default() -> Self {
        FdConfig {
            step: 1e-5,
            field_step: 1e-4,
            outer_step: 1e-3,
        }
    }
}

impl FdConfig {
    pub fn scaled(step: f64, x: f64) -> f64 {
        step * x.abs().max(1.0)
    }
}

/// Sign convention for the Laplacian on functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum LaplacianSign {
    /// `div grad h`
    Plus,
    /// `-div grad h`
    Minus,
}

impl LaplacianSign {
    pub fn factor(self) -> f64 {
        match self {
            LaplacianSign::Plus => 1.0,
            LaplacianSign::Minus => -1.0,
        }
    }
}

/// Axis-aligned open box in chart coordinates. Bounds may be infinite.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl DomainBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> GeoResult<DomainBox> {
        if lower.len() != upper.len() {
            return Err(GeoError::DimensionMismatch {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u)) {
            return Err(GeoError::InvalidInput(format!(
                "empty domain box {lower:?} .. {upper:?}"
            )));
        }
        Ok(DomainBox { lower, upper })
    }

    pub fn unbounded(dim: usize) -> DomainBox {
        DomainBox {
            lower: vec![f64::NEG_INFINITY; dim],
            upper: vec![f64::INFINITY; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.len() == self.dim()
            && p
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (l, u))| x > l && x < u)
    }

    /// Concatenation of two boxes (first block, then second).
    pub fn product(&self, other: &DomainBox) -> DomainBox {
        let mut lower = self.lower.clone();
        lower.extend_from_slice(&other.lower);
        let mut upper = self.upper.clone();
        upper.extend_from_slice(&other.upper);
        DomainBox { lower, upper }
    }

    /// Finite box used for random sampling: infinite sides are replaced by a
    /// window of width 4, and the result is shrunk by 5% on each side.
    pub fn sampling_bounds(&self) -> Vec<(f64, f64)> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(&l, &u)| {
                let (lo, hi) = match (l.is_finite(), u.is_finite()) {
                    (true, true) => (l, u),
                    (true, false) => (l, l + 4.0),
                    (false, true) => (u - 4.0, u),
                    (false, false) => (-2.0, 2.0),
                };
                let margin = 0.05 * (hi - lo);
                (lo + margin, hi - margin)
            })
            .collect()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            self.sampling_bounds()
                .into_iter()
                .map(|(lo, hi)| rng.gen_range(lo..hi)),
        )
    }
}

/// A point with a tangent vector at it.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    pub base: DVector<f64>,
    pub components: DVector<f64>,
}

impl TangentVector {
    pub fn new(base: DVector<f64>, components: DVector<f64>) -> TangentVector {
        TangentVector { base, components }
    }
}

/// Smooth real function of chart coordinates.
#[derive(Clone)]
pub struct ScalarField {
    label: String,
    func: Arc<dyn Fn(&[f64]) -> GeoResult<f64> + Send + Sync>,
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ScalarField({})", self.label)
    }
}

impl ScalarField {
    pub fn new(
        label: impl Into<String>,
        f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> ScalarField {
        ScalarField {
            label: label.into(),
            func: Arc::new(move |p| Ok(f(p))),
        }
    }

    pub fn fallible(
        label: impl Into<String>,
        f: impl Fn(&[f64]) -> GeoResult<f64> + Send + Sync + 'static,
    ) -> ScalarField {
        ScalarField {
            label: label.into(),
            func: Arc::new(f),
        }
    }

    pub fn from_expr(expr: Expr) -> ScalarField {
        let label = expr.to_string();
        ScalarField::fallible(label, move |p| Ok(expr.eval(p)?))
    }

    pub fn constant(value: f64) -> ScalarField {
        ScalarField::new(format!("{value:?}"), move |_| value)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn eval(&self, p: &[f64]) -> GeoResult<f64> {
        (self.func)(p)
    }

    /// `ln h`; evaluation fails where `h <= 0`.
    pub fn ln(&self) -> ScalarField {
        let inner = self.clone();
        ScalarField::fallible(format!("ln({})", self.label), move |p| {
            let v = inner.eval(p)?;
            if v <= 0.0 {
                return Err(GeoError::NonPositiveWarp {
                    warp: inner.label.clone(),
                    point: p.to_vec(),
                    value: v,
                });
            }
            Ok(v.ln())
        })
    }

    /// Pull back along `map`: `q -> h(map(q))`.
    pub fn compose(
        &self,
        label: impl Into<String>,
        map: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> ScalarField {
        let inner = self.clone();
        ScalarField::fallible(label, move |p| inner.eval(&map(p)))
    }

    /// Coordinate differential `(d_1 h, ..., d_n h)` by central differences.
    pub fn partials(&self, p: &[f64], step: f64) -> GeoResult<DVector<f64>> {
        let n = p.len();
        let mut out = DVector::zeros(n);
        let mut q = p.to_vec();
        for i in 0..n {
            let h = FdConfig::scaled(step, p[i]);
            q[i] = p[i] + h;
            let fp = self.eval(&q)?;
            q[i] = p[i] - h;
            let fm = self.eval(&q)?;
            q[i] = p[i];
            out[i] = (fp - fm) / (2.0 * h);
        }
        Ok(out)
    }

    /// Coordinate second derivatives by the standard 3x3 stencil.
    pub fn coordinate_hessian(&self, p: &[f64], step: f64) -> GeoResult<DMatrix<f64>> {
        let n = p.len();
        let f0 = self.eval(p)?;
        let hs: Vec<f64> = p.iter().map(|&x| FdConfig::scaled(step, x)).collect();
        let mut out = DMatrix::zeros(n, n);
        let mut q = p.to_vec();
        for i in 0..n {
            q[i] = p[i] + hs[i];
            let fp = self.eval(&q)?;
            q[i] = p[i] - hs[i];
            let fm = self.eval(&q)?;
            q[i] = p[i];
            out[(i, i)] = (fp - 2.0 * f0 + fm) / (hs[i] * hs[i]);
            for j in 0..i {
                let mut corner = |si: f64, sj: f64| {
                    q[i] = p[i] + si * hs[i];
                    q[j] = p[j] + sj * hs[j];
                    let v = self.eval(&q);
                    q[i] = p[i];
                    q[j] = p[j];
                    v
                };
                let v = (corner(1.0, 1.0)? - corner(1.0, -1.0)? - corner(-1.0, 1.0)?
                    + corner(-1.0, -1.0)?)
                    / (4.0 * hs[i] * hs[j]);
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        Ok(out)
    }
}

pub type FieldFn = Arc<dyn Fn(&[f64]) -> GeoResult<DVector<f64>> + Send + Sync>;

/// Vector field given by its chart components.
#[derive(Clone)]
pub struct VectorField {
    func: FieldFn,
}

impl fmt::Debug for VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "VectorField")
    }
}

impl VectorField {
    pub fn new(f: impl Fn(&[f64]) -> DVector<f64> + Send + Sync + 'static) -> VectorField {
        VectorField {
            func: Arc::new(move |p| Ok(f(p))),
        }
    }

    pub fn fallible(
        f: impl Fn(&[f64]) -> GeoResult<DVector<f64>> + Send + Sync + 'static,
    ) -> VectorField {
        VectorField { func: Arc::new(f) }
    }

    pub fn constant(v: DVector<f64>) -> VectorField {
        VectorField::new(move |_| v.clone())
    }

    pub fn eval(&self, p: &[f64]) -> GeoResult<DVector<f64>> {
        (self.func)(p)
    }
}

/// Christoffel symbols of the second kind, `gamma(k, i, j)` = Γ^k_{ij}.
#[derive(Debug, Clone, PartialEq)]
pub struct Christoffel {
    dim: usize,
    data: Vec<f64>,
}

impl Christoffel {
    pub fn zeros(dim: usize) -> Christoffel {
        Christoffel {
            dim,
            data: vec![0.0; dim * dim * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.data[(k * self.dim + i) * self.dim + j]
    }

    fn set(&mut self, k: usize, i: usize, j: usize, v: f64) {
        let n = self.dim;
        self.data[(k * n + i) * n + j] = v;
    }

    /// `Γ^k_{ij} u^i v^j`.
    pub fn contract(&self, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let n = self.dim;
        DVector::from_fn(n, |k, _| {
            let mut s = 0.0;
            for i in 0..n {
                if u[i] == 0.0 {
                    continue;
                }
                for j in 0..n {
                    s += self.get(k, i, j) * u[i] * v[j];
                }
            }
            s
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Largest |Γ^k_{ij} - Γ^k_{ji}|.
    pub fn asymmetry(&self) -> f64 {
        let n = self.dim;
        let mut worst: f64 = 0.0;
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    worst = worst.max((self.get(k, i, j) - self.get(k, j, i)).abs());
                }
            }
        }
        worst
    }
}

/// A manifold covered by one chart with an explicit metric field.
#[derive(Clone)]
pub struct ChartManifold {
    name: String,
    dim: usize,
    domain: DomainBox,
    metric: MetricFn,
    fd: FdConfig,
}

impl fmt::Debug for ChartManifold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ChartManifold")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("domain", &self.domain)
            .finish()
    }
}

impl ChartManifold {
    pub fn new(
        name: impl Into<String>,
        domain: DomainBox,
        metric: impl Fn(&[f64]) -> GeoResult<DMatrix<f64>> + Send + Sync + 'static,
    ) -> ChartManifold {
        ChartManifold {
            name: name.into(),
            dim: domain.dim(),
            domain,
            metric: Arc::new(metric),
            fd: FdConfig::default(),
        }
    }

    /// Metric given by closed-form, infallible matrix entries.
    pub fn from_fn(
        name: impl Into<String>,
        domain: DomainBox,
        metric: impl Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> ChartManifold {
        ChartManifold::new(name, domain, move |p| Ok(metric(p)))
    }

    /// Metric from a row-major list of `dim * dim` expressions.
    pub fn from_exprs(
        name: impl Into<String>,
        domain: DomainBox,
        entries: Vec<Expr>,
    ) -> GeoResult<ChartManifold> {
        let n = domain.dim();
        if entries.len() != n * n {
            return Err(GeoError::DimensionMismatch {
                expected: n * n,
                got: entries.len(),
            });
        }
        let entries: Vec<Expr> = entries
            .into_iter()
            .map(|e| e.with_arity(n))
            .collect::<Result<_, _>>()?;
        Ok(ChartManifold::new(name, domain, move |p| {
            let mut g = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    g[(i, j)] = entries[i * n + j].eval(p)?;
                }
            }
            Ok(g)
        }))
    }

    /// The zero-dimensional manifold.
    pub fn point() -> ChartManifold {
        ChartManifold::from_fn("point", DomainBox::unbounded(0), |_| DMatrix::zeros(0, 0))
    }

    pub fn with_fd(mut self, fd: FdConfig) -> ChartManifold {
        self.fd = fd;
        self
    }

    pub fn renamed(mut self, name: impl Into<String>) -> ChartManifold {
        self.name = name.into();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn domain(&self) -> &DomainBox {
        &self.domain
    }

    pub fn fd(&self) -> FdConfig {
        self.fd
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        self.domain.contains(p)
    }

    pub fn check_point(&self, p: &[f64]) -> GeoResult<()> {
        if p.len() != self.dim {
            return Err(GeoError::DimensionMismatch {
                expected: self.dim,
                got: p.len(),
            });
        }
        if !self.domain.contains(p) {
            return Err(GeoError::OutOfDomain {
                manifold: self.name.clone(),
                point: p.to_vec(),
            });
        }
        Ok(())
    }

    /// Metric matrix without domain or definiteness checks (stencil use).
    pub fn metric_raw(&self, p: &[f64]) -> GeoResult<DMatrix<f64>> {
        (self.metric)(p)
    }

    /// Checked metric evaluation: in-domain, symmetric to 1e-12, positive definite.
    pub fn eval_metric(&self, p: &[f64]) -> GeoResult<DMatrix<f64>> {
        self.check_point(p)?;
        let g = self.metric_raw(p)?;
        let asymmetry = (&g - g.transpose()).amax();
        if asymmetry > 1e-12 * g.amax().max(1.0) {
            return Err(GeoError::AsymmetricMetric {
                manifold: self.name.clone(),
                point: p.to_vec(),
                asymmetry,
            });
        }
        if self.dim > 0 && Cholesky::new(g.clone()).is_none() {
            return Err(self.singular(p));
        }
        Ok(g)
    }

    fn singular(&self, p: &[f64]) -> GeoError {
        GeoError::SingularMetric {
            manifold: self.name.clone(),
            point: p.to_vec(),
        }
    }

    pub fn inverse_metric(&self, p: &[f64]) -> GeoResult<DMatrix<f64>> {
        let g = self.eval_metric(p)?;
        self.invert(p, g)
    }

    fn invert(&self, p: &[f64], g: DMatrix<f64>) -> GeoResult<DMatrix<f64>> {
        if self.dim == 0 {
            return Ok(g);
        }
        Cholesky::new(g)
            .map(|c| c.inverse())
            .ok_or_else(|| self.singular(p))
    }

    pub fn inner(&self, p: &[f64], u: &DVector<f64>, v: &DVector<f64>) -> GeoResult<f64> {
        let g = self.eval_metric(p)?;
        Ok(u.dot(&(&g * v)))
    }

    pub fn norm(&self, p: &[f64], u: &DVector<f64>) -> GeoResult<f64> {
        Ok(self.inner(p, u, u)?.max(0.0).sqrt())
    }

    /// `[∂_0 g, ∂_1 g, ...]` by central differences.
    pub fn metric_derivatives(&self, p: &[f64]) -> GeoResult<Vec<DMatrix<f64>>> {
        let mut q = p.to_vec();
        (0..self.dim)
            .map(|l| {
                let h = FdConfig::scaled(self.fd.step, p[l]);
                q[l] = p[l] + h;
                let gp = self.metric_raw(&q)?;
                q[l] = p[l] - h;
                let gm = self.metric_raw(&q)?;
                q[l] = p[l];
                Ok((gp - gm) / (2.0 * h))
            })
            .collect()
    }

    /// Γ^k_{ij} = ½ g^{kl}(∂_i g_{jl} + ∂_j g_{il} − ∂_l g_{ij}).
    pub fn christoffel(&self, p: &[f64]) -> GeoResult<Christoffel> {
        let ginv = self.inverse_metric(p)?;
        self.christoffel_with_inverse(p, &ginv)
    }

    /// Christoffel symbols without the domain check (stencil use).
    pub fn christoffel_raw(&self, p: &[f64]) -> GeoResult<Christoffel> {
        let g = self.metric_raw(p)?;
        let ginv = self.invert(p, g)?;
        self.christoffel_with_inverse(p, &ginv)
    }

    fn christoffel_with_inverse(&self, p: &[f64], ginv: &DMatrix<f64>) -> GeoResult<Christoffel> {
        let n = self.dim;
        let dg = self.metric_derivatives(p)?;
        let mut gamma = Christoffel::zeros(n);
        for i in 0..n {
            for j in i..n {
                // lowered symbol Γ_{l,ij}
                let lowered = DVector::from_fn(n, |l, _| {
                    0.5 * (dg[i][(j, l)] + dg[j][(i, l)] - dg[l][(i, j)])
                });
                let raised = ginv * lowered;
                for k in 0..n {
                    gamma.set(k, i, j, raised[k]);
                    gamma.set(k, j, i, raised[k]);
                }
            }
        }
        Ok(gamma)
    }

    /// Central-difference derivative of `field` along `dir` at `p`.
    pub fn directional_derivative(
        &self,
        p: &[f64],
        dir: &DVector<f64>,
        field: &dyn Fn(&[f64]) -> GeoResult<DVector<f64>>,
    ) -> GeoResult<DVector<f64>> {
        directional(p, dir, self.fd.field_step, field)
    }

    /// `∇_u F` at `p` for a field `F` evaluable near `p`.
    pub fn covariant_derivative_along(
        &self,
        p: &[f64],
        u: &DVector<f64>,
        field: &dyn Fn(&[f64]) -> GeoResult<DVector<f64>>,
    ) -> GeoResult<DVector<f64>> {
        let gamma = self.christoffel(p)?;
        let value = field(p)?;
        Ok(self.directional_derivative(p, u, field)? + gamma.contract(u, &value))
    }

    /// `(∇_X Y)^k = X^i ∂_i Y^k + Γ^k_{ij} X^i Y^j`.
    pub fn covariant_derivative(
        &self,
        x: &VectorField,
        y: &VectorField,
        p: &[f64],
    ) -> GeoResult<DVector<f64>> {
        let u = x.eval(p)?;
        self.covariant_derivative_along(p, &u, &|q| y.eval(q))
    }

    /// Lie bracket `[X, Y]^k = X^i ∂_i Y^k − Y^i ∂_i X^k`.
    pub fn bracket(&self, x: &VectorField, y: &VectorField, p: &[f64]) -> GeoResult<DVector<f64>> {
        self.check_point(p)?;
        let xv = x.eval(p)?;
        let yv = y.eval(p)?;
        Ok(self.directional_derivative(p, &xv, &|q| y.eval(q))?
            - self.directional_derivative(p, &yv, &|q| x.eval(q))?)
    }

    /// Riemannian gradient `g^{kj} ∂_j h`.
    pub fn gradient(&self, h: &ScalarField, p: &[f64]) -> GeoResult<DVector<f64>> {
        let ginv = self.inverse_metric(p)?;
        Ok(ginv * h.partials(p, self.fd.step)?)
    }

    /// Covariant Hessian matrix `∂_i∂_j h − Γ^k_{ij} ∂_k h`.
    pub fn hessian_matrix(&self, h: &ScalarField, p: &[f64]) -> GeoResult<DMatrix<f64>> {
        let gamma = self.christoffel(p)?;
        let dh = h.partials(p, self.fd.step)?;
        let mut hess = h.coordinate_hessian(p, self.fd.field_step)?;
        let n = self.dim;
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += gamma.get(k, i, j) * dh[k];
                }
                hess[(i, j)] -= s;
            }
        }
        Ok(hess)
    }

    /// `H^h(X, Y) = X(Y h) − (∇_X Y) h`, evaluated through its tensorial form.
    pub fn hessian(
        &self,
        h: &ScalarField,
        x: &DVector<f64>,
        y: &DVector<f64>,
        p: &[f64],
    ) -> GeoResult<f64> {
        Ok(x.dot(&(self.hessian_matrix(h, p)? * y)))
    }

    /// Laplacian of `h` under the requested sign convention.
    pub fn laplacian(&self, h: &ScalarField, p: &[f64], sign: LaplacianSign) -> GeoResult<f64> {
        let ginv = self.inverse_metric(p)?;
        let hess = self.hessian_matrix(h, p)?;
        Ok(sign.factor() * ginv.component_mul(&hess).sum())
    }

    /// `div X = ∂_i X^i + Γ^i_{ik} X^k`.
    pub fn divergence(&self, x: &VectorField, p: &[f64]) -> GeoResult<f64> {
        let gamma = self.christoffel(p)?;
        let n = self.dim;
        let xv = x.eval(p)?;
        let mut total = 0.0;
        let mut q = p.to_vec();
        for i in 0..n {
            let h = FdConfig::scaled(self.fd.field_step, p[i]);
            q[i] = p[i] + h;
            let fp = x.eval(&q)?[i];
            q[i] = p[i] - h;
            let fm = x.eval(&q)?[i];
            q[i] = p[i];
            total += (fp - fm) / (2.0 * h);
            for k in 0..n {
                total += gamma.get(i, i, k) * xv[k];
            }
        }
        Ok(total)
    }

    /// Gram–Schmidt in the metric at `p`; drops vectors that become
    /// numerically dependent.
    pub fn orthonormalize(
        &self,
        p: &[f64],
        vectors: &[DVector<f64>],
    ) -> GeoResult<Vec<DVector<f64>>> {
        let g = self.eval_metric(p)?;
        Ok(gram_schmidt(&g, vectors))
    }
}

/// Modified Gram–Schmidt (two passes) in the inner product `g`.
pub fn gram_schmidt(g: &DMatrix<f64>, vectors: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let mut out: Vec<DVector<f64>> = Vec::new();
    for v in vectors {
        let scale = v.dot(&(g * v)).max(0.0).sqrt();
        if scale == 0.0 {
            continue;
        }
        let mut w = v.clone();
        for _ in 0..2 {
            for e in &out {
                let c = e.dot(&(g * &w));
                w -= e * c;
            }
        }
        let norm = w.dot(&(g * &w)).max(0.0).sqrt();
        if norm > 1e-9 * scale {
            out.push(w / norm);
        }
    }
    out
}

/// `(F(p + s d) − F(p − s d)) / 2s`, with `s` chosen so the largest
/// coordinate displacement is `step * max(1, |p|_inf)`.
pub fn directional(
    p: &[f64],
    dir: &DVector<f64>,
    step: f64,
    field: &dyn Fn(&[f64]) -> GeoResult<DVector<f64>>,
) -> GeoResult<DVector<f64>> {
    let dmax = dir.amax();
    if dmax == 0.0 {
        return Ok(DVector::zeros(field(p)?.len()));
    }
    let pmax = p.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let s = FdConfig::scaled(step, pmax) / dmax;
    let plus: Vec<f64> = p.iter().zip(dir.iter()).map(|(x, d)| x + s * d).collect();
    let minus: Vec<f64> = p.iter().zip(dir.iter()).map(|(x, d)| x - s * d).collect();
    Ok((field(&plus)? - field(&minus)?) / (2.0 * s))
}

/// Random quadratic vector field: each component is
/// `a + b·x + x·C·x` with `a, b` in [-1, 1] and `C` in [-0.5, 0.5].
pub fn random_polynomial_field<R: Rng>(dim: usize, rng: &mut R) -> VectorField {
    let a: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let b: Vec<f64> = (0..dim * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let c: Vec<f64> = (0..dim * dim * dim)
        .map(|_| rng.gen_range(-0.5..0.5))
        .collect();
    VectorField::new(move |p| {
        DVector::from_fn(dim, |k, _| {
            let mut v = a[k];
            for i in 0..dim {
                v += b[k * dim + i] * p[i];
                for j in 0..dim {
                    v += c[(k * dim + i) * dim + j] * p[i] * p[j];
                }
            }
            v
        })
    })
}
