//! Riemannian maps, their vertical/horizontal splitting, the O'Neill
//! tensors `T` and `A`, and the second fundamental form of the map.
//!
//! `T` and `A` are evaluated from the projector field `P_V(q)` onto
//! `ker φ_*`. The projector is unique at every point (no basis choice), so
//! it can be differentiated by central differences; vectors are extended
//! to fields with constant coordinate coefficients, which is harmless
//! because both tensors are pointwise in their arguments.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SVD};
use rand::Rng;
use serde::Serialize;

use crate::error::{GeoError, GeoResult};
use crate::expr::Expr;
use crate::manifold::{gram_schmidt, ChartManifold, Christoffel, FdConfig, ScalarField, VectorField};
use crate::warped::{Factor, WarpedProduct};

/// Singular values below this fraction of the largest are null directions.
pub const RANK_THRESHOLD: f64 = 1e-7;
/// Width of the ambiguous band around the threshold, relative to the largest
/// singular value.
pub const RANK_BAND: f64 = 1e-8;

pub type PointMap = Arc<dyn Fn(&[f64]) -> GeoResult<DVector<f64>> + Send + Sync>;

#[derive(Clone)]
pub struct RiemannianMap {
    name: String,
    source: ChartManifold,
    target: ChartManifold,
    func: PointMap,
}

impl fmt::Debug for RiemannianMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "RiemannianMap({}: {} -> {})",
            self.name,
            self.source.name(),
            self.target.name()
        )
    }
}

/// Orthonormal bases of `V = ker φ_*` and `H = V^⊥` at a point, with the
/// matching `g`-orthogonal projectors.
#[derive(Debug, Clone)]
pub struct Frame {
    pub point: Vec<f64>,
    pub metric: DMatrix<f64>,
    pub vertical: Vec<DVector<f64>>,
    pub horizontal: Vec<DVector<f64>>,
    pub p_vertical: DMatrix<f64>,
    pub p_horizontal: DMatrix<f64>,
}

impl Frame {
    pub fn vertical_part(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.p_vertical * v
    }

    pub fn horizontal_part(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.p_horizontal * v
    }

    pub fn inner(&self, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        u.dot(&(&self.metric * v))
    }

    pub fn norm(&self, v: &DVector<f64>) -> f64 {
        self.inner(v, v).max(0.0).sqrt()
    }

    /// Largest deviation of the combined basis from g-orthonormality.
    pub fn orthonormality_residual(&self) -> f64 {
        let all: Vec<&DVector<f64>> = self.vertical.iter().chain(&self.horizontal).collect();
        let mut worst = 0.0_f64;
        for (i, a) in all.iter().enumerate() {
            for (j, b) in all.iter().enumerate() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((self.inner(a, b) - target).abs());
            }
        }
        worst
    }
}

/// Frame plus the first-order data needed for covariant derivatives of the
/// projected fields at one point.
#[derive(Debug, Clone)]
pub struct Splitting {
    pub frame: Frame,
    pub christoffel: Christoffel,
    /// `∂_i P_V` for each coordinate direction.
    d_vertical: Vec<DMatrix<f64>>,
}

impl Splitting {
    fn d_projector(&self, u: &DVector<f64>) -> DMatrix<f64> {
        let n = u.len();
        let mut d = DMatrix::zeros(n, n);
        for (i, di) in self.d_vertical.iter().enumerate() {
            if u[i] != 0.0 {
                d += di * u[i];
            }
        }
        d
    }

    /// `∇_u (P_V F)` with `F` extended by constant coefficients.
    pub fn nabla_vertical(&self, u: &DVector<f64>, f: &DVector<f64>) -> DVector<f64> {
        let fv = self.frame.vertical_part(f);
        self.d_projector(u) * f + self.christoffel.contract(u, &fv)
    }

    /// `∇_u (P_H F)` with `F` extended by constant coefficients.
    pub fn nabla_horizontal(&self, u: &DVector<f64>, f: &DVector<f64>) -> DVector<f64> {
        let fh = self.frame.horizontal_part(f);
        -(self.d_projector(u) * f) + self.christoffel.contract(u, &fh)
    }

    fn oneill(&self, u: &DVector<f64>, f: &DVector<f64>) -> DVector<f64> {
        self.frame.horizontal_part(&self.nabla_vertical(u, f))
            + self.frame.vertical_part(&self.nabla_horizontal(u, f))
    }

    /// `T_E F = H ∇_{VE} VF + V ∇_{VE} HF`.
    pub fn tensor_t(&self, e: &DVector<f64>, f: &DVector<f64>) -> DVector<f64> {
        self.oneill(&self.frame.vertical_part(e), f)
    }

    /// `A_E F = H ∇_{HE} VF + V ∇_{HE} HF`.
    pub fn tensor_a(&self, e: &DVector<f64>, f: &DVector<f64>) -> DVector<f64> {
        self.oneill(&self.frame.horizontal_part(e), f)
    }

    /// `(1/k) Σ_i T(e_i, e_i)` over a vertical orthonormal frame.
    pub fn mean_curvature(&self) -> GeoResult<DVector<f64>> {
        let k = self.frame.vertical.len();
        if k == 0 {
            return Err(GeoError::NoFibers(format!("{:?}", self.frame.point)));
        }
        let mut h = DVector::zeros(self.frame.point.len());
        for e in &self.frame.vertical {
            h += self.tensor_t(e, e);
        }
        Ok(h / k as f64)
    }

    /// `max |T(e_i, e_j) − δ_ij H|` over vertical frame pairs.
    pub fn umbilical_residual(&self) -> GeoResult<f64> {
        let h = self.mean_curvature()?;
        let vs = &self.frame.vertical;
        let mut worst = 0.0_f64;
        for i in 0..vs.len() {
            for j in i..vs.len() {
                let mut r = self.tensor_t(&vs[i], &vs[j]);
                if i == j {
                    r -= &h;
                }
                worst = worst.max(self.frame.norm(&r));
            }
        }
        Ok(worst)
    }

    /// `max |T(e_i, e_j)|`: zero iff the fibers are totally geodesic.
    pub fn fiber_t_norm(&self) -> f64 {
        let vs = &self.frame.vertical;
        let mut worst = 0.0_f64;
        for a in vs {
            for b in vs {
                worst = worst.max(self.frame.norm(&self.tensor_t(a, b)));
            }
        }
        worst
    }
}

impl RiemannianMap {
    pub fn new(
        name: impl Into<String>,
        source: ChartManifold,
        target: ChartManifold,
        f: impl Fn(&[f64]) -> GeoResult<DVector<f64>> + Send + Sync + 'static,
    ) -> RiemannianMap {
        RiemannianMap {
            name: name.into(),
            source,
            target,
            func: Arc::new(f),
        }
    }

    pub fn identity(m: &ChartManifold) -> RiemannianMap {
        RiemannianMap::new("identity", m.clone(), m.clone(), |p| {
            Ok(DVector::from_column_slice(p))
        })
    }

    /// Map to the zero-dimensional manifold.
    pub fn constant(m: &ChartManifold) -> RiemannianMap {
        RiemannianMap::new("constant", m.clone(), ChartManifold::point(), |_| {
            Ok(DVector::zeros(0))
        })
    }

    /// Component expressions over the source coordinates.
    pub fn from_exprs(
        name: impl Into<String>,
        source: ChartManifold,
        target: ChartManifold,
        components: Vec<Expr>,
    ) -> GeoResult<RiemannianMap> {
        if components.len() != target.dim() {
            return Err(GeoError::DimensionMismatch {
                expected: target.dim(),
                got: components.len(),
            });
        }
        let components: Vec<Expr> = components
            .into_iter()
            .map(|e| e.with_arity(source.dim()))
            .collect::<Result<_, _>>()?;
        Ok(RiemannianMap::new(name, source, target, move |p| {
            let mut out = DVector::zeros(components.len());
            for (k, e) in components.iter().enumerate() {
                out[k] = e.eval(p)?;
            }
            Ok(out)
        }))
    }

    pub fn with_fd(mut self, fd: FdConfig) -> RiemannianMap {
        self.source = self.source.with_fd(fd);
        self.target = self.target.with_fd(fd);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn source(&self) -> &ChartManifold {
        &self.source
    }

    pub fn target(&self) -> &ChartManifold {
        &self.target
    }

    /// `φ(p)` without domain checks (stencil use).
    pub fn apply_raw(&self, p: &[f64]) -> GeoResult<DVector<f64>> {
        (self.func)(p)
    }

    pub fn apply(&self, p: &[f64]) -> GeoResult<DVector<f64>> {
        self.source.check_point(p)?;
        let q = self.apply_raw(p)?;
        if q.len() != self.target.dim() {
            return Err(GeoError::DimensionMismatch {
                expected: self.target.dim(),
                got: q.len(),
            });
        }
        Ok(q)
    }

    /// `∂φ^a/∂x^i` by central differences, `target_dim x source_dim`.
    pub fn jacobian(&self, p: &[f64]) -> GeoResult<DMatrix<f64>> {
        self.apply(p)?;
        let (k, n) = (self.target.dim(), self.source.dim());
        let mut jac = DMatrix::zeros(k, n);
        let mut q = p.to_vec();
        let step = self.source.fd().step;
        for i in 0..n {
            let h = FdConfig::scaled(step, p[i]);
            q[i] = p[i] + h;
            let fp = self.apply_raw(&q)?;
            q[i] = p[i] - h;
            let fm = self.apply_raw(&q)?;
            q[i] = p[i];
            jac.set_column(i, &((fp - fm) / (2.0 * h)));
        }
        Ok(jac)
    }

    pub fn pushforward(&self, p: &[f64], v: &DVector<f64>) -> GeoResult<DVector<f64>> {
        Ok(self.jacobian(p)? * v)
    }

    /// Vertical/horizontal splitting at `p`.
    pub fn frame(&self, p: &[f64]) -> GeoResult<Frame> {
        let g = self.source.eval_metric(p)?;
        let n = self.source.dim();
        let jac = self.jacobian(p)?;
        if n == 0 {
            return Ok(Frame {
                point: p.to_vec(),
                metric: g,
                vertical: vec![],
                horizontal: vec![],
                p_vertical: DMatrix::zeros(0, 0),
                p_horizontal: DMatrix::zeros(0, 0),
            });
        }
        // Pad to a square matrix so the SVD returns a full right basis.
        let rows = jac.nrows().max(n);
        let mut padded = DMatrix::zeros(rows, n);
        padded.view_mut((0, 0), (jac.nrows(), n)).copy_from(&jac);
        let svd = SVD::new(padded, false, true);
        let v_t = svd.v_t.expect("requested right singular vectors");
        let sigma_max = svd.singular_values.max();
        let threshold = RANK_THRESHOLD * sigma_max;
        let mut null = Vec::new();
        let mut row_space = Vec::new();
        for (i, &s) in svd.singular_values.iter().enumerate() {
            if sigma_max > 0.0 && (s - threshold).abs() <= RANK_BAND * sigma_max {
                return Err(GeoError::RankDrop {
                    point: p.to_vec(),
                    singular_value: s,
                });
            }
            let dir = v_t.row(i).transpose();
            if sigma_max > 0.0 && s > threshold {
                row_space.push(dir);
            } else {
                null.push(dir);
            }
        }
        let vertical = gram_schmidt(&g, &null);
        let ginv = self.source.inverse_metric(p)?;
        let lifted: Vec<DVector<f64>> = row_space.iter().map(|r| &ginv * r).collect();
        let horizontal = gram_schmidt(&g, &lifted);
        let mut p_vertical = DMatrix::zeros(n, n);
        for e in &vertical {
            p_vertical += e * (e.transpose() * &g);
        }
        let p_horizontal = DMatrix::identity(n, n) - &p_vertical;
        Ok(Frame {
            point: p.to_vec(),
            metric: g,
            vertical,
            horizontal,
            p_vertical,
            p_horizontal,
        })
    }

    /// Frame, Christoffel symbols and projector derivatives at `p`.
    pub fn splitting(&self, p: &[f64]) -> GeoResult<Splitting> {
        let frame = self.frame(p)?;
        let christoffel = self.source.christoffel(p)?;
        let n = self.source.dim();
        let step = self.source.fd().field_step;
        let mut q = p.to_vec();
        let mut d_vertical = Vec::with_capacity(n);
        for i in 0..n {
            let h = FdConfig::scaled(step, p[i]);
            q[i] = p[i] + h;
            let plus = self.frame(&q)?.p_vertical;
            q[i] = p[i] - h;
            let minus = self.frame(&q)?.p_vertical;
            q[i] = p[i];
            d_vertical.push((plus - minus) / (2.0 * h));
        }
        Ok(Splitting {
            frame,
            christoffel,
            d_vertical,
        })
    }

    pub fn tensor_t(&self, p: &[f64], e: &DVector<f64>, f: &DVector<f64>) -> GeoResult<DVector<f64>> {
        Ok(self.splitting(p)?.tensor_t(e, f))
    }

    pub fn tensor_a(&self, p: &[f64], e: &DVector<f64>, f: &DVector<f64>) -> GeoResult<DVector<f64>> {
        Ok(self.splitting(p)?.tensor_a(e, f))
    }

    pub fn mean_curvature(&self, p: &[f64]) -> GeoResult<DVector<f64>> {
        self.splitting(p)?.mean_curvature()
    }

    pub fn umbilical_residual(&self, p: &[f64]) -> GeoResult<f64> {
        self.splitting(p)?.umbilical_residual()
    }

    /// Horizontal field projecting onto the constant target field `c`:
    /// `G⁻¹ Jᵀ (J G⁻¹ Jᵀ)⁺ c`.
    pub fn basic_field(&self, c: DVector<f64>) -> VectorField {
        let map = self.clone();
        VectorField::fallible(move |q| {
            let jac = map.jacobian(q)?;
            let ginv = map.source.inverse_metric(q)?;
            let gram = &jac * &ginv * jac.transpose();
            let eps = 1e-12 * gram.amax().max(1e-300);
            let pinv = gram
                .pseudo_inverse(eps)
                .map_err(|e| GeoError::NotComputable(e.to_string()))?;
            Ok(&ginv * jac.transpose() * pinv * &c)
        })
    }

    /// `(∇φ_*)(X, Y) = ∇^φ_X φ_*Y − φ_*(∇_X Y)`, evaluated as
    /// `D²φ(X, Y) + Γ^N(JX, JY) − J Γ^M(X, Y)`.
    pub fn second_fundamental_form(
        &self,
        p: &[f64],
        x: &DVector<f64>,
        y: &DVector<f64>,
    ) -> GeoResult<DVector<f64>> {
        let jac = self.jacobian(p)?;
        let gamma_m = self.source.christoffel(p)?;
        let image = self.apply(p)?;
        let gamma_n = self.target.christoffel(image.as_slice())?;
        let d2 = self.mixed_second_derivative(p, x, y)?;
        let jx = &jac * x;
        let jy = &jac * y;
        Ok(d2 + gamma_n.contract(&jx, &jy) - &jac * gamma_m.contract(x, y))
    }

    fn mixed_second_derivative(
        &self,
        p: &[f64],
        x: &DVector<f64>,
        y: &DVector<f64>,
    ) -> GeoResult<DVector<f64>> {
        let k = self.target.dim();
        if x.amax() == 0.0 || y.amax() == 0.0 {
            return Ok(DVector::zeros(k));
        }
        let pmax = p.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let s = FdConfig::scaled(self.source.fd().field_step, pmax);
        let (sx, sy) = (s / x.amax(), s / y.amax());
        let at = |a: f64, b: f64| -> GeoResult<DVector<f64>> {
            let q: Vec<f64> = (0..p.len()).map(|i| p[i] + a * sx * x[i] + b * sy * y[i]).collect();
            self.apply_raw(&q)
        };
        Ok((at(1.0, 1.0)? - at(1.0, -1.0)? - at(-1.0, 1.0)? + at(-1.0, -1.0)?) / (4.0 * sx * sy))
    }

    /// `τ = Σ_a (∇φ_*)(e_a, e_a)` over a horizontal orthonormal frame.
    pub fn tension(&self, p: &[f64]) -> GeoResult<DVector<f64>> {
        let frame = self.frame(p)?;
        let mut tau = DVector::zeros(self.target.dim());
        for e in &frame.horizontal {
            tau += self.second_fundamental_form(p, e, e)?;
        }
        Ok(tau)
    }

    /// `max |g_N(φ_* e_a, φ_* e_b) − δ_ab|` over the horizontal frame.
    pub fn isometry_residual(&self, p: &[f64]) -> GeoResult<f64> {
        let frame = self.frame(p)?;
        let jac = self.jacobian(p)?;
        let image = self.apply(p)?;
        let gn = self.target.eval_metric(image.as_slice())?;
        let pushed: Vec<DVector<f64>> = frame.horizontal.iter().map(|e| &jac * e).collect();
        let mut worst = 0.0_f64;
        for (a, ea) in pushed.iter().enumerate() {
            for (b, eb) in pushed.iter().enumerate() {
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((ea.dot(&(&gn * eb)) - target).abs());
            }
        }
        Ok(worst)
    }
}

/// Random unit vector in the span of an orthonormal family.
pub fn random_unit_in<R: Rng>(basis: &[DVector<f64>], dim: usize, rng: &mut R) -> DVector<f64> {
    let mut v = DVector::zeros(dim);
    let mut total = 0.0;
    while total == 0.0 {
        v = DVector::zeros(dim);
        let mut sq = 0.0;
        for e in basis {
            let c: f64 = rng.gen_range(-1.0..1.0);
            v += e * c;
            sq += c * c;
        }
        total = if basis.is_empty() { 1.0 } else { sq };
    }
    v / total.sqrt()
}

/// Worst residuals of the structural properties of `T` and `A`.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct OneillReport {
    pub samples: usize,
    /// `|T(U,W) − T(W,U)|`, vertical `U, W`.
    pub t_symmetry: f64,
    /// `|A(X,Y) + A(Y,X)|`, horizontal `X, Y`.
    pub a_antisymmetry: f64,
    /// Wrong-distribution components of `T` and `A` outputs.
    pub reversal: f64,
    /// `|g(T_E F, G) + g(F, T_E G)|` and the same for `A`.
    pub skew: f64,
    /// `|T_E − T_{VE}|` and `|A_E − A_{HE}|` on mixed inputs.
    pub projection: f64,
    /// The four connection splittings, field-based.
    pub derivative_identities: [f64; 4],
    /// `|H ∇_V X − A_X V|` for basic `X`, if the map admits them here.
    pub basic: f64,
}

impl OneillReport {
    pub fn algebra_residual(&self) -> f64 {
        self.derivative_identities
            .iter()
            .copied()
            .chain([self.reversal, self.projection])
            .fold(0.0, f64::max)
    }

    pub fn derivative_residual(&self) -> f64 {
        [self.t_symmetry, self.a_antisymmetry, self.skew, self.basic]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

/// Splittings of `∇` at one point, with vectors extended
/// as projected constant-coefficient fields (so both sides share terms).
pub fn derivative_identity_residuals(s: &Splitting, v: &DVector<f64>, w: &DVector<f64>, x: &DVector<f64>, y: &DVector<f64>) -> [f64; 4] {
    let fr = &s.frame;
    // ∇_V W = T_V W + V∇_V W
    let nvw = s.nabla_vertical(v, w);
    let r1 = nvw.clone() - (s.tensor_t(v, w) + fr.vertical_part(&nvw));
    // ∇_V X = H∇_V X + T_V X
    let nvx = s.nabla_horizontal(v, x);
    let r2 = nvx.clone() - (fr.horizontal_part(&nvx) + s.tensor_t(v, x));
    // ∇_X V = A_X V + V∇_X V
    let nxv = s.nabla_vertical(x, v);
    let r3 = nxv.clone() - (s.tensor_a(x, v) + fr.vertical_part(&nxv));
    // ∇_X Y = H∇_X Y + A_X Y
    let nxy = s.nabla_horizontal(x, y);
    let r4 = nxy.clone() - (fr.horizontal_part(&nxy) + s.tensor_a(x, y));
    [fr.norm(&r1), fr.norm(&r2), fr.norm(&r3), fr.norm(&r4)]
}

/// Sample the structural properties of `T`, `A` at random points.
pub fn oneill_check<R: Rng>(
    map: &RiemannianMap,
    samples: usize,
    rng: &mut R,
) -> GeoResult<OneillReport> {
    let m = map.source();
    let n = m.dim();
    let mut rep = OneillReport {
        samples,
        ..Default::default()
    };
    for _ in 0..samples {
        let p = m.domain().sample(rng);
        let p = p.as_slice();
        let s = map.splitting(p)?;
        let fr = &s.frame;
        let vert = |rng: &mut R| random_unit_in(&fr.vertical, n, rng);
        let hor = |rng: &mut R| random_unit_in(&fr.horizontal, n, rng);
        let (u, w) = (vert(rng), vert(rng));
        let (x, y) = (hor(rng), hor(rng));
        let any = |rng: &mut R| DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let (e, f, h) = (any(rng), any(rng), any(rng));

        let up = |slot: &mut f64, v: f64| *slot = slot.max(v);
        up(&mut rep.t_symmetry, fr.norm(&(s.tensor_t(&u, &w) - s.tensor_t(&w, &u))));
        up(&mut rep.a_antisymmetry, fr.norm(&(s.tensor_a(&x, &y) + s.tensor_a(&y, &x))));

        let rev = [
            fr.norm(&fr.vertical_part(&s.tensor_t(&u, &w))),
            fr.norm(&fr.horizontal_part(&s.tensor_t(&u, &x))),
            fr.norm(&fr.horizontal_part(&s.tensor_a(&x, &y))),
            fr.norm(&fr.vertical_part(&s.tensor_a(&x, &u))),
        ];
        up(&mut rep.reversal, rev.into_iter().fold(0.0, f64::max));

        let skew_t = fr.inner(&s.tensor_t(&e, &f), &h) + fr.inner(&f, &s.tensor_t(&e, &h));
        let skew_a = fr.inner(&s.tensor_a(&e, &f), &h) + fr.inner(&f, &s.tensor_a(&e, &h));
        up(&mut rep.skew, skew_t.abs().max(skew_a.abs()));

        let pt = s.tensor_t(&e, &f) - s.tensor_t(&fr.vertical_part(&e), &f);
        let pa = s.tensor_a(&e, &f) - s.tensor_a(&fr.horizontal_part(&e), &f);
        up(&mut rep.projection, fr.norm(&pt).max(fr.norm(&pa)));

        let l = derivative_identity_residuals(&s, &u, &w, &x, &y);
        for k in 0..4 {
            up(&mut rep.derivative_identities[k], l[k]);
        }

        if !fr.vertical.is_empty() && !fr.horizontal.is_empty() {
            let c = map.pushforward(p, &x)?;
            let basic = map.basic_field(c);
            let xb = basic.eval(p)?;
            let lhs = fr.horizontal_part(&m.covariant_derivative_along(p, &u, &|q| basic.eval(q))?);
            let rhs = s.tensor_a(&xb, &u);
            up(&mut rep.basic, fr.norm(&(lhs - rhs)));
        }
    }
    Ok(rep)
}

/// `φ = φ1 x φ2` between warped products.
#[derive(Debug, Clone)]
pub struct ProductRiemannianMap {
    name: String,
    source: WarpedProduct,
    target: WarpedProduct,
    factor1: RiemannianMap,
    factor2: RiemannianMap,
    whole: RiemannianMap,
}

impl ProductRiemannianMap {
    pub fn new(
        name: impl Into<String>,
        source: WarpedProduct,
        target: WarpedProduct,
        factor1: RiemannianMap,
        factor2: RiemannianMap,
    ) -> GeoResult<ProductRiemannianMap> {
        let name = name.into();
        let checks = [
            (source.base().dim(), factor1.source().dim()),
            (source.fiber().dim(), factor2.source().dim()),
            (target.base().dim(), factor1.target().dim()),
            (target.fiber().dim(), factor2.target().dim()),
        ];
        for (expected, got) in checks {
            if expected != got {
                return Err(GeoError::DimensionMismatch { expected, got });
            }
        }
        let m1 = source.base().dim();
        let (f1, f2) = (factor1.clone(), factor2.clone());
        let whole = RiemannianMap::new(
            name.clone(),
            source.manifold().clone(),
            target.manifold().clone(),
            move |p| {
                let (p1, p2) = p.split_at(m1);
                let a = f1.apply_raw(p1)?;
                let b = f2.apply_raw(p2)?;
                Ok(DVector::from_iterator(
                    a.len() + b.len(),
                    a.iter().chain(b.iter()).copied(),
                ))
            },
        );
        Ok(ProductRiemannianMap {
            name,
            source,
            target,
            factor1,
            factor2,
            whole,
        })
    }

    /// Projection onto the base: `φ1 = id`, `φ2` constant.
    pub fn pi1(source: &WarpedProduct) -> ProductRiemannianMap {
        let target = WarpedProduct::build(
            source.base().clone(),
            ChartManifold::point(),
            ScalarField::constant(1.0),
        )
        .expect("constant warp");
        ProductRiemannianMap::new(
            "pi1",
            source.clone(),
            target,
            RiemannianMap::identity(source.base()),
            RiemannianMap::constant(source.fiber()),
        )
        .expect("dimensions agree by construction")
    }

    /// Projection onto the fiber with the unwarped fiber metric.
    pub fn pi2(source: &WarpedProduct) -> ProductRiemannianMap {
        let target = WarpedProduct::build(
            ChartManifold::point(),
            source.fiber().clone(),
            ScalarField::constant(1.0),
        )
        .expect("constant warp");
        ProductRiemannianMap::new(
            "pi2",
            source.clone(),
            target,
            RiemannianMap::constant(source.base()),
            RiemannianMap::identity(source.fiber()),
        )
        .expect("dimensions agree by construction")
    }

    pub fn identity(source: &WarpedProduct) -> ProductRiemannianMap {
        ProductRiemannianMap::new(
            "identity",
            source.clone(),
            source.clone(),
            RiemannianMap::identity(source.base()),
            RiemannianMap::identity(source.fiber()),
        )
        .expect("dimensions agree by construction")
    }

    /// Factor maps from component expressions written in the product
    /// coordinates `x1..xn`; `phi1` may only use base coordinates and
    /// `phi2` only fiber coordinates.
    pub fn from_exprs(
        name: impl Into<String>,
        source: WarpedProduct,
        target: WarpedProduct,
        phi1: Vec<Expr>,
        phi2: Vec<Expr>,
    ) -> GeoResult<ProductRiemannianMap> {
        let (m1, n) = (source.base().dim(), source.dim());
        let restrict = |exprs: Vec<Expr>,
                        block: std::ops::Range<usize>,
                        label: &str|
         -> GeoResult<Vec<Expr>> {
            exprs
                .into_iter()
                .map(|e| {
                    let e = e.with_arity(n)?;
                    if let Some(bad) = e.variables().into_iter().find(|v| !block.contains(v)) {
                        return Err(GeoError::InvalidInput(format!(
                            "{label} component `{e}` uses x{} outside its factor",
                            bad + 1
                        )));
                    }
                    Ok(e)
                })
                .collect()
        };
        let phi1 = restrict(phi1, 0..m1, "phi1")?;
        let phi2 = restrict(phi2, m1..n, "phi2")?;
        let factor = |exprs: Vec<Expr>,
                      src: &ChartManifold,
                      tgt: &ChartManifold,
                      offset: usize,
                      label: &str|
         -> GeoResult<RiemannianMap> {
            if exprs.len() != tgt.dim() {
                return Err(GeoError::DimensionMismatch {
                    expected: tgt.dim(),
                    got: exprs.len(),
                });
            }
            Ok(RiemannianMap::new(label, src.clone(), tgt.clone(), move |q| {
                let mut full = vec![0.0; n];
                full[offset..offset + q.len()].copy_from_slice(q);
                let mut out = DVector::zeros(exprs.len());
                for (k, e) in exprs.iter().enumerate() {
                    out[k] = e.eval(&full)?;
                }
                Ok(out)
            }))
        };
        let f1 = factor(phi1, source.base(), target.base(), 0, "phi1")?;
        let f2 = factor(phi2, source.fiber(), target.fiber(), m1, "phi2")?;
        ProductRiemannianMap::new(name, source, target, f1, f2)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn source(&self) -> &WarpedProduct {
        &self.source
    }

    pub fn target(&self) -> &WarpedProduct {
        &self.target
    }

    pub fn factor(&self, factor: Factor) -> &RiemannianMap {
        match factor {
            Factor::Base => &self.factor1,
            Factor::Fiber => &self.factor2,
        }
    }

    pub fn factor1(&self) -> &RiemannianMap {
        &self.factor1
    }

    pub fn factor2(&self) -> &RiemannianMap {
        &self.factor2
    }

    /// The map `M -> N` as a whole.
    pub fn whole(&self) -> &RiemannianMap {
        &self.whole
    }

    pub fn apply(&self, p: &[f64]) -> GeoResult<DVector<f64>> {
        self.whole.apply(p)
    }

    /// Blockwise `(φ1_* u, φ2_* v)` for `w = (u, v)`.
    pub fn pushforward(&self, p: &[f64], w: &DVector<f64>) -> GeoResult<DVector<f64>> {
        let (p1, p2) = self.source.split_point(p);
        let (u, v) = self.source.split(w);
        let a = self.factor1.pushforward(p1, &u)?;
        let b = self.factor2.pushforward(p2, &v)?;
        Ok(self.target.join(&a, &b))
    }

    pub fn frame(&self, p: &[f64]) -> GeoResult<Frame> {
        self.whole.frame(p)
    }

    pub fn splitting(&self, p: &[f64]) -> GeoResult<Splitting> {
        self.whole.splitting(p)
    }

    pub fn with_fd(self, fd: FdConfig) -> ProductRiemannianMap {
        let name = self.name.clone();
        ProductRiemannianMap::new(
            name,
            self.source.with_fd(fd),
            self.target.with_fd(fd),
            self.factor1.with_fd(fd),
            self.factor2.with_fd(fd),
        )
        .expect("dimensions unchanged")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_4;

    fn dv(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn pi1_frame_is_block_structured() {
        let w = crate::warped::WarpedProduct::build(
            catalog::line(),
            catalog::line(),
            ScalarField::new("exp(x1)", |p| p[0].exp()),
        )
        .unwrap();
        let pi = ProductRiemannianMap::pi1(&w);
        let fr = pi.frame(&[0.5, 1.0]).unwrap();
        assert_eq!(fr.vertical.len(), 1);
        assert_eq!(fr.horizontal.len(), 1);
        assert!((fr.vertical[0][0]).abs() < 1e-12);
        assert!((fr.vertical[0][1].abs() - (-0.5_f64).exp()).abs() < 1e-9);
        assert!((fr.horizontal[0].abs() - dv(&[1.0, 0.0])).amax() < 1e-9);
        assert!(fr.orthonormality_residual() < 1e-10);
    }

    #[test]
    fn identity_has_no_fibers() {
        let id = ProductRiemannianMap::identity(&catalog::sphere_model());
        let fr = id.frame(&[1.0, 0.3]).unwrap();
        assert!(fr.vertical.is_empty());
        assert_eq!(fr.horizontal.len(), 2);
        assert!(matches!(
            id.whole().mean_curvature(&[1.0, 0.3]),
            Err(GeoError::NoFibers(_))
        ));
        assert!(id.whole().isometry_residual(&[1.0, 0.3]).unwrap() < 1e-8);
    }

    #[test]
    fn heisenberg_frame_at_origin() {
        let h = catalog::heisenberg_submersion();
        let fr = h.frame(&[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(fr.vertical.len(), 1);
        assert!((fr.vertical[0].abs() - dv(&[0.0, 0.0, 1.0])).amax() < 1e-9);
        let hz = &fr.p_horizontal;
        assert!((hz - DMatrix::from_diagonal(&dv(&[1.0, 1.0, 0.0]))).amax() < 1e-9);
    }

    #[test]
    fn sphere_fiber_second_fundamental_form() {
        let pi = ProductRiemannianMap::pi1(&catalog::sphere_model());
        let s = pi.splitting(&[FRAC_PI_4, 0.0]).unwrap();
        let u = dv(&[0.0, 1.0]);
        let t = s.tensor_t(&u, &u);
        assert!((t - dv(&[-0.5, 0.0])).amax() < 1e-6);
        let h = s.mean_curvature().unwrap();
        assert!((h - dv(&[-1.0, 0.0])).amax() < 1e-6);
        assert!(s.umbilical_residual().unwrap() < 1e-5);
    }

    #[test]
    fn h3_fibers_are_umbilical() {
        let pi = ProductRiemannianMap::pi1(&catalog::h3_model());
        let s = pi.splitting(&[0.3, 0.2, -0.4]).unwrap();
        assert!((s.mean_curvature().unwrap() - dv(&[-1.0, 0.0, 0.0])).amax() < 1e-5);
        assert!(s.umbilical_residual().unwrap() < 1e-4);
    }

    #[test]
    fn heisenberg_a_tensor_value() {
        let h = catalog::heisenberg_submersion();
        let s = h.splitting(&[0.0, 0.0, 0.0]).unwrap();
        let a = s.tensor_a(&dv(&[1.0, 0.0, 0.0]), &dv(&[0.0, 1.0, 0.0]));
        assert!((s.frame.norm(&a) - 0.5).abs() < 1e-5);
        assert!(s.frame.norm(&s.frame.horizontal_part(&a)) < 1e-9);
    }

    #[test]
    fn oneill_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let maps = [
            ProductRiemannianMap::pi1(&catalog::flat_product()).whole().clone(),
            ProductRiemannianMap::pi1(&catalog::sphere_model()).whole().clone(),
            ProductRiemannianMap::pi1(&catalog::h3_model()).whole().clone(),
            catalog::heisenberg_submersion(),
        ];
        for map in maps {
            let rep = oneill_check(&map, 10, &mut rng).unwrap();
            assert!(rep.algebra_residual() < 1e-10, "{map:?} {rep:?}");
            assert!(rep.derivative_residual() < 1e-4, "{map:?} {rep:?}");
        }
    }

    #[test]
    fn pushforward_is_blockwise() {
        let w = crate::warped::WarpedProduct::build(
            catalog::euclidean(2),
            catalog::line(),
            ScalarField::constant(1.0),
        )
        .unwrap();
        let target = crate::warped::WarpedProduct::build(
            catalog::line(),
            catalog::line(),
            ScalarField::constant(1.0),
        )
        .unwrap();
        let phi1 = vec![Expr::parse("x1", 3).unwrap()];
        let phi2 = vec![Expr::parse("x3", 3).unwrap()];
        let map = ProductRiemannianMap::from_exprs("proj", w, target, phi1, phi2).unwrap();
        let v = map.pushforward(&[0.1, 0.2, 0.3], &dv(&[1.0, 2.0, 3.0])).unwrap();
        assert!((v - dv(&[1.0, 3.0])).amax() < 1e-9);
        let whole = map.whole().pushforward(&[0.1, 0.2, 0.3], &dv(&[1.0, 2.0, 3.0])).unwrap();
        assert!((whole - dv(&[1.0, 3.0])).amax() < 1e-9);
    }

    #[test]
    fn cross_block_expressions_are_rejected() {
        let w = catalog::h3_model();
        let phi1 = vec![Expr::parse("x1 + x2", 3).unwrap()];
        let phi2 = vec![Expr::parse("x2", 3).unwrap(), Expr::parse("x3", 3).unwrap()];
        let err = ProductRiemannianMap::from_exprs("bad", w.clone(), w, phi1, phi2).unwrap_err();
        assert!(matches!(err, GeoError::InvalidInput(_)));
    }

    #[test]
    fn graph_map_second_fundamental_form() {
        // x -> (x, x^2) from the line into the plane
        let map = RiemannianMap::new("graph", catalog::line(), catalog::euclidean(2), |p| {
            Ok(dv(&[p[0], p[0] * p[0]]))
        });
        let b = map.second_fundamental_form(&[0.0], &dv(&[1.0]), &dv(&[1.0])).unwrap();
        assert!((b - dv(&[0.0, 2.0])).amax() < 1e-6);
        let id = RiemannianMap::identity(&catalog::sphere2());
        let b = id
            .second_fundamental_form(&[1.0, 0.5], &dv(&[1.0, 0.0]), &dv(&[0.3, 1.0]))
            .unwrap();
        assert!(b.amax() < 1e-6);
    }
}
