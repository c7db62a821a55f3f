//! Warped products `M1 x_f M2` with the block metric `g1 + f^2 g2`.
//!
//! The product chart concatenates coordinates, base first, so lifting a
//! factor vector is zero padding and splitting is slicing.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{GeoError, GeoResult};
use crate::manifold::{random_polynomial_field, ChartManifold, FdConfig, ScalarField, VectorField};

/// Number of base points probed for positivity of the warp.
pub const WARP_PROBES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Factor {
    Base,
    Fiber,
}

#[derive(Debug, Clone)]
pub struct WarpedProduct {
    base: ChartManifold,
    fiber: ChartManifold,
    warp: ScalarField,
    manifold: ChartManifold,
}

/// A factor vector together with its zero-padded product components.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedVector {
    pub origin: Factor,
    pub factor_vector: DVector<f64>,
    pub components: DVector<f64>,
}

/// Vector field on one factor, viewed on the product.
#[derive(Debug, Clone)]
pub struct LiftedField {
    origin: Factor,
    field: VectorField,
}

impl LiftedField {
    pub fn new(origin: Factor, field: VectorField) -> LiftedField {
        LiftedField { origin, field }
    }

    pub fn origin(&self) -> Factor {
        self.origin
    }

    pub fn factor_field(&self) -> &VectorField {
        &self.field
    }

    /// Recognize a product-chart field as a lift. Checked at `probe`: the
    /// components in the other block must vanish and the remaining block
    /// must not move when the other factor's coordinates are perturbed.
    pub fn from_product_field(
        w: &WarpedProduct,
        field: &VectorField,
        probe: &[f64],
    ) -> GeoResult<LiftedField> {
        let m1 = w.base.dim();
        let v = field.eval(probe)?;
        let scale = v.amax().max(1.0);
        let base_part = v.rows(0, m1).amax();
        let fiber_part = v.rows(m1, w.fiber.dim()).amax();
        let tiny = 1e-12 * scale;
        let origin = match (base_part > tiny, fiber_part > tiny) {
            (true, true) => {
                return Err(GeoError::MixedField(format!(
                    "nonzero components in both factors at {probe:?}"
                )))
            }
            (false, true) => Factor::Fiber,
            _ => Factor::Base,
        };
        let (own, other) = match origin {
            Factor::Base => (0..m1, m1..w.dim()),
            Factor::Fiber => (m1..w.dim(), 0..m1),
        };
        for i in other {
            for sign in [1.0, -1.0] {
                let mut q = probe.to_vec();
                q[i] += sign * 1e-3 * q[i].abs().max(1.0);
                let moved = field.eval(&q)?;
                let drift = own
                    .clone()
                    .map(|k| (moved[k] - v[k]).abs())
                    .fold(0.0, f64::max);
                if drift > 1e-9 * scale {
                    return Err(GeoError::MixedField(format!(
                        "{origin:?} block depends on coordinate x{}",
                        i + 1
                    )));
                }
            }
        }
        let field = field.clone();
        let (lo, hi) = (own.start, own.end);
        let other_point: Vec<f64> = match origin {
            Factor::Base => probe[m1..].to_vec(),
            Factor::Fiber => probe[..m1].to_vec(),
        };
        Ok(LiftedField::new(
            origin,
            VectorField::fallible(move |q| {
                let full = match origin {
                    Factor::Base => [q, &other_point[..]].concat(),
                    Factor::Fiber => [&other_point[..], q].concat(),
                };
                Ok(field.eval(&full)?.rows(lo, hi - lo).into_owned())
            }),
        ))
    }

    /// Factor components at the product point `p`.
    pub fn eval_factor(&self, w: &WarpedProduct, p: &[f64]) -> GeoResult<DVector<f64>> {
        let (p1, p2) = w.split_point(p);
        match self.origin {
            Factor::Base => self.field.eval(p1),
            Factor::Fiber => self.field.eval(p2),
        }
    }

    pub fn eval(&self, w: &WarpedProduct, p: &[f64]) -> GeoResult<DVector<f64>> {
        Ok(w.lift(self.origin, &self.eval_factor(w, p)?))
    }

    pub fn to_product_field(&self, w: &WarpedProduct) -> VectorField {
        let w = w.clone();
        let me = self.clone();
        VectorField::fallible(move |p| me.eval(&w, p))
    }
}

impl WarpedProduct {
    /// Assemble `base x_warp fiber`. The warp is a function of base
    /// coordinates and must be positive at every probed base point.
    pub fn build(
        base: ChartManifold,
        fiber: ChartManifold,
        warp: ScalarField,
    ) -> GeoResult<WarpedProduct> {
        let probes = if base.dim() == 0 { 1 } else { WARP_PROBES };
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        for _ in 0..probes {
            let p1 = base.domain().sample(&mut rng);
            let value = warp.eval(p1.as_slice())?;
            if !(value > 0.0) || !value.is_finite() {
                return Err(GeoError::NonPositiveWarp {
                    warp: warp.label().to_string(),
                    point: p1.as_slice().to_vec(),
                    value,
                });
            }
        }

        let m1 = base.dim();
        let n = m1 + fiber.dim();
        let name = format!("{} x_({}) {}", base.name(), warp.label(), fiber.name());
        let domain = base.domain().product(fiber.domain());
        let (b, fb, wf) = (base.clone(), fiber.clone(), warp.clone());
        let manifold = ChartManifold::new(name, domain, move |p| {
            let (p1, p2) = p.split_at(m1);
            let f = wf.eval(p1)?;
            let mut g = DMatrix::zeros(n, n);
            g.view_mut((0, 0), (m1, m1)).copy_from(&b.metric_raw(p1)?);
            g.view_mut((m1, m1), (n - m1, n - m1))
                .copy_from(&(fb.metric_raw(p2)? * (f * f)));
            Ok(g)
        })
        .with_fd(base.fd());
        Ok(WarpedProduct {
            base,
            fiber,
            warp,
            manifold,
        })
    }

    /// Same product with every finite-difference step replaced.
    pub fn with_fd(self, fd: FdConfig) -> WarpedProduct {
        WarpedProduct {
            base: self.base.with_fd(fd),
            fiber: self.fiber.with_fd(fd),
            warp: self.warp,
            manifold: self.manifold.with_fd(fd),
        }
    }

    pub fn base(&self) -> &ChartManifold {
        &self.base
    }

    pub fn fiber(&self) -> &ChartManifold {
        &self.fiber
    }

    pub fn warp(&self) -> &ScalarField {
        &self.warp
    }

    pub fn manifold(&self) -> &ChartManifold {
        &self.manifold
    }

    pub fn name(&self) -> &str {
        self.manifold.name()
    }

    pub fn dim(&self) -> usize {
        self.manifold.dim()
    }

    pub fn factor_dim(&self, factor: Factor) -> usize {
        match factor {
            Factor::Base => self.base.dim(),
            Factor::Fiber => self.fiber.dim(),
        }
    }

    pub fn factor(&self, factor: Factor) -> &ChartManifold {
        match factor {
            Factor::Base => &self.base,
            Factor::Fiber => &self.fiber,
        }
    }

    pub fn split_point<'a>(&self, p: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        p.split_at(self.base.dim())
    }

    /// `λ(v) = (π1* v, π2* v)`.
    pub fn split(&self, v: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let m1 = self.base.dim();
        (
            v.rows(0, m1).into_owned(),
            v.rows(m1, self.fiber.dim()).into_owned(),
        )
    }

    pub fn lift(&self, factor: Factor, v: &DVector<f64>) -> DVector<f64> {
        let m1 = self.base.dim();
        let mut out = DVector::zeros(self.dim());
        match factor {
            Factor::Base => out.rows_mut(0, m1).copy_from(v),
            Factor::Fiber => out.rows_mut(m1, self.fiber.dim()).copy_from(v),
        }
        out
    }

    pub fn lift_vector(&self, factor: Factor, v: &DVector<f64>) -> LiftedVector {
        LiftedVector {
            origin: factor,
            factor_vector: v.clone(),
            components: self.lift(factor, v),
        }
    }

    /// Inverse of [`split`](Self::split).
    pub fn join(&self, v1: &DVector<f64>, v2: &DVector<f64>) -> DVector<f64> {
        self.lift(Factor::Base, v1) + self.lift(Factor::Fiber, v2)
    }

    /// `f` at the base projection of the product point `p`.
    pub fn warp_at(&self, p: &[f64]) -> GeoResult<f64> {
        self.warp.eval(self.split_point(p).0)
    }

    /// `X1(f)` for a base vector `x1` at the product point `p`.
    pub fn warp_derivative(&self, p: &[f64], x1: &DVector<f64>) -> GeoResult<f64> {
        let p1 = self.split_point(p).0;
        Ok(self.warp.partials(p1, self.base.fd().step)?.dot(x1))
    }

    /// `∇^M ln f`, the lift of the base gradient of `ln f`.
    pub fn log_warp_gradient(&self, p: &[f64]) -> GeoResult<DVector<f64>> {
        let p1 = self.split_point(p).0;
        Ok(self.lift(Factor::Base, &self.base.gradient(&self.warp.ln(), p1)?))
    }

    /// `‖grad f‖²` in the base metric.
    pub fn warp_gradient_norm_sq(&self, p: &[f64]) -> GeoResult<f64> {
        let p1 = self.split_point(p).0;
        let grad = self.base.gradient(&self.warp, p1)?;
        Ok(self.base.inner(p1, &grad, &grad)?)
    }

    /// `|g_M(v,v) − g1(v1,v1) − f² g2(v2,v2)|`.
    pub fn metric_split_residual(&self, p: &[f64], v: &DVector<f64>) -> GeoResult<f64> {
        let (p1, p2) = self.split_point(p);
        let (v1, v2) = self.split(v);
        let f = self.warp_at(p)?;
        let whole = self.manifold.inner(p, v, v)?;
        let parts = self.base.inner(p1, &v1, &v1)? + f * f * self.fiber.inner(p2, &v2, &v2)?;
        Ok((whole - parts).abs())
    }

    /// Closed-form `∇^M_X Y` for lifted fields:
    /// base/base is the lift of `∇^1`, mixed pairs give `(X1 f / f) X2`,
    /// fiber/fiber is the lift of `∇^2` minus `g_M(X2, Y2) ∇ ln f`.
    pub fn warped_connection(
        &self,
        x: &LiftedField,
        y: &LiftedField,
        p: &[f64],
    ) -> GeoResult<DVector<f64>> {
        self.manifold.check_point(p)?;
        let (p1, p2) = self.split_point(p);
        match (x.origin, y.origin) {
            (Factor::Base, Factor::Base) => {
                let v = self.base.covariant_derivative(&x.field, &y.field, p1)?;
                Ok(self.lift(Factor::Base, &v))
            }
            (Factor::Base, Factor::Fiber) | (Factor::Fiber, Factor::Base) => {
                let (b, fb) = if x.origin == Factor::Base { (x, y) } else { (y, x) };
                let x1 = b.field.eval(p1)?;
                let x2 = fb.field.eval(p2)?;
                let coef = self.warp_derivative(p, &x1)? / self.warp_at(p)?;
                Ok(self.lift(Factor::Fiber, &(x2 * coef)))
            }
            (Factor::Fiber, Factor::Fiber) => {
                let tangential = self.fiber.covariant_derivative(&x.field, &y.field, p2)?;
                let xv = x.eval(self, p)?;
                let yv = y.eval(self, p)?;
                let gxy = self.manifold.inner(p, &xv, &yv)?;
                Ok(self.lift(Factor::Fiber, &tangential) - self.log_warp_gradient(p)? * gxy)
            }
        }
    }
}

/// Worst closed-form vs brute-force discrepancies, one per case, measured
/// in the product metric.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConnectionReport {
    pub samples: usize,
    pub base_base: f64,
    pub base_fiber: f64,
    pub fiber_base: f64,
    /// Base block of the fiber/fiber case.
    pub fiber_fiber_normal: f64,
    /// Fiber block of the fiber/fiber case.
    pub fiber_fiber_tangential: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl ConnectionReport {
    pub fn max_residual(&self) -> f64 {
        [
            self.base_base,
            self.base_fiber,
            self.fiber_base,
            self.fiber_fiber_normal,
            self.fiber_fiber_tangential,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

pub const CONNECTION_TOLERANCE: f64 = 1e-4;

/// Compare [`WarpedProduct::warped_connection`] with the Levi-Civita
/// connection of the product metric on random quadratic lifted fields.
pub fn verify_connection_law<R: Rng>(
    w: &WarpedProduct,
    samples: usize,
    rng: &mut R,
) -> GeoResult<ConnectionReport> {
    let m = w.manifold();
    let (m1, m2) = (w.base.dim(), w.fiber.dim());
    let mut worst = [0.0_f64; 5];
    for _ in 0..samples {
        let p = m.domain().sample(rng);
        let p = p.as_slice();
        let g = m.eval_metric(p)?;
        let norm = |v: &DVector<f64>| v.dot(&(&g * v)).max(0.0).sqrt();

        let mut fields = Vec::new();
        if m1 > 0 {
            fields.push(LiftedField::new(Factor::Base, random_polynomial_field(m1, rng)));
            fields.push(LiftedField::new(Factor::Base, random_polynomial_field(m1, rng)));
        }
        if m2 > 0 {
            fields.push(LiftedField::new(Factor::Fiber, random_polynomial_field(m2, rng)));
            fields.push(LiftedField::new(Factor::Fiber, random_polynomial_field(m2, rng)));
        }
        for x in &fields {
            for y in &fields {
                let closed = w.warped_connection(x, y, p)?;
                let brute =
                    m.covariant_derivative(&x.to_product_field(w), &y.to_product_field(w), p)?;
                let diff = closed - brute;
                match (x.origin, y.origin) {
                    (Factor::Base, Factor::Base) => worst[0] = worst[0].max(norm(&diff)),
                    (Factor::Base, Factor::Fiber) => worst[1] = worst[1].max(norm(&diff)),
                    (Factor::Fiber, Factor::Base) => worst[2] = worst[2].max(norm(&diff)),
                    (Factor::Fiber, Factor::Fiber) => {
                        let (d1, d2) = w.split(&diff);
                        worst[3] = worst[3].max(norm(&w.lift(Factor::Base, &d1)));
                        worst[4] = worst[4].max(norm(&w.lift(Factor::Fiber, &d2)));
                    }
                }
            }
        }
    }
    let mut report = ConnectionReport {
        samples,
        base_base: worst[0],
        base_fiber: worst[1],
        fiber_base: worst[2],
        fiber_fiber_normal: worst[3],
        fiber_fiber_tangential: worst[4],
        tolerance: CONNECTION_TOLERANCE,
        passed: false,
    };
    report.passed = report.max_residual() <= CONNECTION_TOLERANCE;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use std::f64::consts::FRAC_PI_4;

    fn dv(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn constant(origin: Factor, xs: &[f64]) -> LiftedField {
        LiftedField::new(origin, VectorField::constant(dv(xs)))
    }

    #[test]
    fn block_metrics() {
        let flat = WarpedProduct::build(catalog::line(), catalog::line(), ScalarField::constant(1.0))
            .unwrap();
        assert_eq!(flat.manifold().eval_metric(&[0.3, -2.0]).unwrap(), DMatrix::identity(2, 2));

        let sphere = catalog::sphere_model();
        let g = sphere.manifold().eval_metric(&[FRAC_PI_4, 1.0]).unwrap();
        assert!((g[(1, 1)] - 0.5).abs() < 1e-15);

        let h3 = catalog::h3_model();
        let g = h3.manifold().eval_metric(&[0.7, 1.0, 2.0]).unwrap();
        let e = (1.4_f64).exp();
        assert!((g - DMatrix::from_diagonal(&dv(&[1.0, e, e]))).amax() < 1e-12);
    }

    #[test]
    fn nonpositive_warp_is_rejected() {
        let err = WarpedProduct::build(
            catalog::line(),
            catalog::line(),
            ScalarField::new("x1", |p| p[0]),
        )
        .unwrap_err();
        match err {
            GeoError::NonPositiveWarp { point, value, .. } => {
                assert!(value <= 0.0);
                assert!(point[0] <= 0.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn split_and_lift() {
        let h3 = catalog::h3_model();
        let (v1, v2) = h3.split(&dv(&[1.0, 2.0, 3.0]));
        assert_eq!(v1, dv(&[1.0]));
        assert_eq!(v2, dv(&[2.0, 3.0]));
        let (a, b) = h3.split(&h3.lift(Factor::Base, &dv(&[5.0])));
        assert_eq!((a, b), (dv(&[5.0]), dv(&[0.0, 0.0])));
        let r = h3
            .metric_split_residual(&[0.4, 0.0, 1.0], &dv(&[1.0, -2.0, 0.5]))
            .unwrap();
        assert!(r <= 1e-12);
    }

    #[test]
    fn mixed_terms_vanish_for_constant_warp() {
        let flat = catalog::flat_product();
        let x = constant(Factor::Base, &[1.0]);
        let y = constant(Factor::Fiber, &[0.3, 2.0]);
        let v = flat.warped_connection(&x, &y, &[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(v.amax(), 0.0);
        assert_eq!(flat.log_warp_gradient(&[0.1, 0.2, 0.3]).unwrap().amax(), 0.0);
    }

    #[test]
    fn mixed_term_on_exponential_warp() {
        let w = WarpedProduct::build(
            catalog::line(),
            catalog::line(),
            ScalarField::new("exp(x1)", |p| p[0].exp()),
        )
        .unwrap();
        let x = constant(Factor::Base, &[1.0]);
        let y = constant(Factor::Fiber, &[1.0]);
        let p = [0.2, -1.0];
        let closed = w.warped_connection(&x, &y, &p).unwrap();
        assert!((closed - dv(&[0.0, 1.0])).amax() < 1e-8);
        // order does not matter
        assert_eq!(
            w.warped_connection(&x, &y, &p).unwrap(),
            w.warped_connection(&y, &x, &p).unwrap()
        );
        let brute = w
            .manifold()
            .covariant_derivative(&x.to_product_field(&w), &y.to_product_field(&w), &p)
            .unwrap();
        assert!((brute - dv(&[0.0, 1.0])).amax() < 1e-8);
    }

    #[test]
    fn sphere_fiber_fiber_normal_part() {
        let s = catalog::sphere_model();
        let u = constant(Factor::Fiber, &[1.0]);
        let v = s.warped_connection(&u, &u, &[FRAC_PI_4, 0.0]).unwrap();
        assert!((v - dv(&[-0.5, 0.0])).amax() < 1e-9);
    }

    #[test]
    fn lifted_field_recognition() {
        let h3 = catalog::h3_model();
        let pure = VectorField::new(|p| dv(&[0.0, p[1], p[2] * p[2]]));
        let lf = LiftedField::from_product_field(&h3, &pure, &[0.1, 0.5, 0.7]).unwrap();
        assert_eq!(lf.origin(), Factor::Fiber);
        assert_eq!(lf.factor_field().eval(&[2.0, 3.0]).unwrap(), dv(&[2.0, 9.0]));

        let mixed = VectorField::new(|_| dv(&[1.0, 1.0, 0.0]));
        assert!(matches!(
            LiftedField::from_product_field(&h3, &mixed, &[0.1, 0.5, 0.7]),
            Err(GeoError::MixedField(_))
        ));
        let dependent = VectorField::new(|p| dv(&[0.0, p[0], 0.0]));
        assert!(matches!(
            LiftedField::from_product_field(&h3, &dependent, &[0.1, 0.5, 0.7]),
            Err(GeoError::MixedField(_))
        ));
    }

    #[test]
    fn connection_law_on_catalog_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for w in [catalog::flat_product(), catalog::sphere_model(), catalog::h3_model()] {
            let report = verify_connection_law(&w, 20, &mut rng).unwrap();
            assert!(report.passed, "{}: {report:?}", w.name());
        }
    }
}
