//! Fixed-step RK4 geodesics, the vertical/horizontal split of a trace, and
//! along-curve residuals of the geodesic equation.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{GeoError, GeoResult};
use crate::manifold::ChartManifold;
use crate::rmap::RiemannianMap;
use crate::warped::{Factor, WarpedProduct};

/// Relative energy drift beyond which a run is rejected.
pub const MAX_ENERGY_DRIFT: f64 = 1e-3;
/// Band around the pure cases used to police the requested case.
pub const CASE_ANGLE_BAND: f64 = 0.1;

/// Samples of a curve, optionally split against a map.
#[derive(Debug, Clone, Default)]
pub struct GeodesicTrace {
    pub times: Vec<f64>,
    pub points: Vec<DVector<f64>>,
    pub velocities: Vec<DVector<f64>>,
    /// `b(t) = g(γ', γ')`.
    pub speed_sq: Vec<f64>,
    /// Time at which the curve left the chart, if it did.
    pub exit_time: Option<f64>,
    pub vertical: Vec<DVector<f64>>,
    pub horizontal: Vec<DVector<f64>>,
    pub omega: Vec<f64>,
}

impl GeodesicTrace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn is_decomposed(&self) -> bool {
        !self.omega.is_empty()
    }

    /// `max |b(t) − b(0)| / b(0)`.
    pub fn speed_drift(&self) -> f64 {
        let b0 = match self.speed_sq.first() {
            Some(&b) if b > 0.0 => b,
            _ => return 0.0,
        };
        self.speed_sq
            .iter()
            .map(|b| (b - b0).abs() / b0)
            .fold(0.0, f64::max)
    }

    /// Sample a prescribed curve `t -> (γ(t), γ'(t))` on `[t0, t1]`.
    pub fn from_curve(
        m: &ChartManifold,
        curve: impl Fn(f64) -> (DVector<f64>, DVector<f64>),
        t0: f64,
        t1: f64,
        dt: f64,
    ) -> GeoResult<GeodesicTrace> {
        check_step(t1 - t0, dt)?;
        let steps = ((t1 - t0) / dt).round() as usize;
        let mut trace = GeodesicTrace::default();
        for k in 0..=steps {
            let t = t0 + k as f64 * dt;
            let (p, v) = curve(t);
            let b = m.inner(p.as_slice(), &v, &v)?;
            trace.times.push(t);
            trace.points.push(p);
            trace.velocities.push(v);
            trace.speed_sq.push(b);
        }
        Ok(trace)
    }
}

fn check_step(span: f64, dt: f64) -> GeoResult<()> {
    if !(dt > 0.0) || !(span > 0.0) {
        return Err(GeoError::InvalidInput(format!(
            "need dt > 0 and a positive time span (dt = {dt}, span = {span})"
        )));
    }
    Ok(())
}

fn acceleration(m: &ChartManifold, p: &DVector<f64>, v: &DVector<f64>) -> GeoResult<DVector<f64>> {
    Ok(-m.christoffel(p.as_slice())?.contract(v, v))
}

/// Classic RK4 on `p' = v, v' = −Γ(v, v)`. Leaving the chart ends the
/// trace early with `exit_time` set; relative energy drift above 1e-3
/// is an error.
pub fn integrate(
    m: &ChartManifold,
    p0: &DVector<f64>,
    v0: &DVector<f64>,
    t_end: f64,
    dt: f64,
) -> GeoResult<GeodesicTrace> {
    check_step(t_end, dt)?;
    m.check_point(p0.as_slice())?;
    if v0.len() != m.dim() {
        return Err(GeoError::DimensionMismatch {
            expected: m.dim(),
            got: v0.len(),
        });
    }
    if v0.amax() == 0.0 {
        return Err(GeoError::InvalidInput("initial velocity is zero".into()));
    }
    let steps = (t_end / dt).round() as usize;
    let b0 = m.inner(p0.as_slice(), v0, v0)?;
    let mut trace = GeodesicTrace::default();
    trace.times.push(0.0);
    trace.points.push(p0.clone());
    trace.velocities.push(v0.clone());
    trace.speed_sq.push(b0);

    let (mut p, mut v) = (p0.clone(), v0.clone());
    for k in 1..=steps {
        let t = k as f64 * dt;
        let stage = |p: &DVector<f64>, v: &DVector<f64>| acceleration(m, p, v);
        let step = (|| -> GeoResult<(DVector<f64>, DVector<f64>)> {
            let a1 = stage(&p, &v)?;
            let (p2, v2) = (&p + &v * (dt / 2.0), &v + &a1 * (dt / 2.0));
            let a2 = stage(&p2, &v2)?;
            let (p3, v3) = (&p + &v2 * (dt / 2.0), &v + &a2 * (dt / 2.0));
            let a3 = stage(&p3, &v3)?;
            let (p4, v4) = (&p + &v3 * dt, &v + &a3 * dt);
            let a4 = stage(&p4, &v4)?;
            Ok((
                &p + (&v + &v2 * 2.0 + &v3 * 2.0 + &v4) * (dt / 6.0),
                &v + (a1 + a2 * 2.0 + a3 * 2.0 + a4) * (dt / 6.0),
            ))
        })();
        let (np, nv) = match step {
            Ok(next) if m.contains(next.0.as_slice()) => next,
            Ok(_) | Err(GeoError::OutOfDomain { .. }) => {
                trace.exit_time = Some(t);
                return Ok(trace);
            }
            Err(e) => return Err(e),
        };
        let b = m.inner(np.as_slice(), &nv, &nv)?;
        let drift = (b - b0).abs() / b0;
        if drift > MAX_ENERGY_DRIFT {
            return Err(GeoError::StepTooLarge { time: t, drift });
        }
        trace.times.push(t);
        trace.points.push(np.clone());
        trace.velocities.push(nv.clone());
        trace.speed_sq.push(b);
        p = np;
        v = nv;
    }
    Ok(trace)
}

/// Fill `U = P_V γ'`, `Y = γ' − U` and `ω = atan2(|U|, |Y|)`.
pub fn decompose(map: &RiemannianMap, trace: &mut GeodesicTrace) -> GeoResult<()> {
    let parts: Vec<(DVector<f64>, DVector<f64>, f64)> = trace
        .points
        .par_iter()
        .zip(trace.velocities.par_iter())
        .map(|(p, v)| {
            let fr = map.frame(p.as_slice())?;
            let u = fr.vertical_part(v);
            let y = v - &u;
            let omega = fr.norm(&u).atan2(fr.norm(&y));
            Ok((u, y, omega))
        })
        .collect::<GeoResult<_>>()?;
    trace.vertical.clear();
    trace.horizontal.clear();
    trace.omega.clear();
    for (u, y, w) in parts {
        trace.vertical.push(u);
        trace.horizontal.push(y);
        trace.omega.push(w);
    }
    Ok(())
}

/// Derivative of sampled data in `t`: centered inside, one-sided
/// second order at the two ends.
pub fn time_derivative(times: &[f64], values: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let n = values.len();
    if n < 3 {
        return values.iter().map(|v| DVector::zeros(v.len())).collect();
    }
    (0..n)
        .map(|k| {
            if k == 0 {
                let h = times[1] - times[0];
                (&values[1] * 4.0 - &values[0] * 3.0 - &values[2]) / (2.0 * h)
            } else if k == n - 1 {
                let h = times[n - 1] - times[n - 2];
                (&values[n - 1] * 3.0 - &values[n - 2] * 4.0 + &values[n - 3]) / (2.0 * h)
            } else {
                (&values[k + 1] - &values[k - 1]) / (times[k + 1] - times[k - 1])
            }
        })
        .collect()
}

/// Same as [`time_derivative`] for scalar series.
pub fn scalar_time_derivative(times: &[f64], values: &[f64]) -> Vec<f64> {
    let wrapped: Vec<DVector<f64>> = values.iter().map(|&v| DVector::from_element(1, v)).collect();
    time_derivative(times, &wrapped).into_iter().map(|v| v[0]).collect()
}

/// O'Neill quantities at one trace sample.
#[derive(Debug, Clone)]
pub struct CurveSample {
    pub t_uu: DVector<f64>,
    pub t_uy: DVector<f64>,
    pub a_yy: DVector<f64>,
    pub a_yu: DVector<f64>,
    /// `V D_t U` and `H D_t Y`.
    pub v_dt_u: DVector<f64>,
    pub h_dt_y: DVector<f64>,
    pub metric: nalgebra::DMatrix<f64>,
}

impl CurveSample {
    pub fn norm(&self, v: &DVector<f64>) -> f64 {
        v.dot(&(&self.metric * v)).max(0.0).sqrt()
    }

    pub fn inner(&self, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        u.dot(&(&self.metric * v))
    }
}

/// Evaluate the O'Neill tensors and along-curve derivatives of `U`, `Y`
/// at every sample of a decomposed trace.
pub fn curve_samples(map: &RiemannianMap, trace: &GeodesicTrace) -> GeoResult<Vec<CurveSample>> {
    if !trace.is_decomposed() {
        return Err(GeoError::InvalidInput("trace has not been decomposed".into()));
    }
    let du = time_derivative(&trace.times, &trace.vertical);
    let dy = time_derivative(&trace.times, &trace.horizontal);
    (0..trace.len())
        .into_par_iter()
        .map(|k| {
            let p = trace.points[k].as_slice();
            let s = map.splitting(p)?;
            let (u, y, v) = (&trace.vertical[k], &trace.horizontal[k], &trace.velocities[k]);
            let gamma = &s.christoffel;
            let dt_u = &du[k] + gamma.contract(v, u);
            let dt_y = &dy[k] + gamma.contract(v, y);
            Ok(CurveSample {
                t_uu: s.tensor_t(u, u),
                t_uy: s.tensor_t(u, y),
                a_yy: s.tensor_a(y, y),
                a_yu: s.tensor_a(y, u),
                v_dt_u: s.frame.vertical_part(&dt_u),
                h_dt_y: s.frame.horizontal_part(&dt_y),
                metric: s.frame.metric.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum GeodesicCase {
    /// `γ'` vertical.
    Vertical = 1,
    /// `γ'` horizontal.
    Horizontal = 2,
    /// Neither.
    Mixed = 3,
}

impl GeodesicCase {
    pub fn from_index(i: u8) -> Option<GeodesicCase> {
        match i {
            1 => Some(GeodesicCase::Vertical),
            2 => Some(GeodesicCase::Horizontal),
            3 => Some(GeodesicCase::Mixed),
            _ => None,
        }
    }
}

/// Vertical and horizontal residual norms of the case conditions.
#[derive(Debug, Clone, Serialize)]
pub struct CaseResiduals {
    pub case: GeodesicCase,
    pub vertical: Vec<f64>,
    pub horizontal: Vec<f64>,
    /// `|A_Y Y|`, reported on its own whatever the case.
    pub a_yy: Vec<f64>,
}

impl CaseResiduals {
    pub fn max(&self) -> f64 {
        self.vertical
            .iter()
            .chain(&self.horizontal)
            .copied()
            .fold(0.0, f64::max)
    }

    pub fn at(&self, k: usize) -> f64 {
        self.vertical[k].max(self.horizontal[k])
    }
}

fn check_case(trace: &GeodesicTrace, case: GeodesicCase) -> GeoResult<()> {
    use std::f64::consts::FRAC_PI_2;
    for (k, &w) in trace.omega.iter().enumerate() {
        let bad = match case {
            GeodesicCase::Vertical => w < FRAC_PI_2 - CASE_ANGLE_BAND,
            GeodesicCase::Horizontal => w > CASE_ANGLE_BAND,
            GeodesicCase::Mixed => false,
        };
        if bad {
            return Err(GeoError::CaseMismatch {
                case: case as u8,
                time: trace.times[k],
                omega: w,
            });
        }
    }
    Ok(())
}

/// Case-wise components of `∇_γ' γ'` along a decomposed trace.
///
/// Case 1: `|V D_t U|` and `|T(U,U)|`. Case 2: `|A(Y,Y)|` and `|H D_t Y|`.
/// Case 3: `|V D_t U + T(U,Y) + A_Y Y|` and `|T(U,U) + H D_t Y + A(Y,U)|`,
/// where `V D_t U` collects `∇̂_U U + V ∇_Y U` and `H D_t Y` collects
/// `H ∇_U Y + H ∇_Y Y`.
pub fn case_residuals(
    samples: &[CurveSample],
    trace: &GeodesicTrace,
    case: GeodesicCase,
) -> GeoResult<CaseResiduals> {
    check_case(trace, case)?;
    let mut out = CaseResiduals {
        case,
        vertical: Vec::with_capacity(samples.len()),
        horizontal: Vec::with_capacity(samples.len()),
        a_yy: Vec::with_capacity(samples.len()),
    };
    for s in samples {
        let (v, h) = match case {
            GeodesicCase::Vertical => (s.norm(&s.v_dt_u), s.norm(&s.t_uu)),
            GeodesicCase::Horizontal => (s.norm(&s.a_yy), s.norm(&s.h_dt_y)),
            GeodesicCase::Mixed => (
                s.norm(&(&s.v_dt_u + &s.t_uy + &s.a_yy)),
                s.norm(&(&s.t_uu + &s.h_dt_y + &s.a_yu)),
            ),
        };
        out.vertical.push(v);
        out.horizontal.push(h);
        out.a_yy.push(s.norm(&s.a_yy));
    }
    Ok(out)
}

/// Residuals of the expansion
/// `∇γ'γ' = ∇¹X1 + 2 (X1 f / f) X2 − g(X2, X2) ∇ln f + ∇²X2`
/// along any sampled curve on a warped product.
#[derive(Debug, Clone, Serialize)]
pub struct ExpansionResiduals {
    pub residual: Vec<f64>,
    pub lhs_norm: Vec<f64>,
    pub rhs_norm: Vec<f64>,
}

impl ExpansionResiduals {
    pub fn max(&self) -> f64 {
        self.residual.iter().copied().fold(0.0, f64::max)
    }
}

pub fn expansion_check(w: &WarpedProduct, trace: &GeodesicTrace) -> GeoResult<ExpansionResiduals> {
    let acc = time_derivative(&trace.times, &trace.velocities);
    let rows: Vec<(f64, f64, f64)> = (0..trace.len())
        .into_par_iter()
        .map(|k| {
            let p = trace.points[k].as_slice();
            let v = &trace.velocities[k];
            let m = w.manifold();
            let lhs = &acc[k] + m.christoffel(p)?.contract(v, v);

            let (p1, p2) = w.split_point(p);
            let (v1, v2) = w.split(v);
            let (a1, a2) = w.split(&acc[k]);
            let nabla1 = a1 + w.base().christoffel(p1)?.contract(&v1, &v1);
            let nabla2 = a2 + w.fiber().christoffel(p2)?.contract(&v2, &v2);
            let f = w.warp_at(p)?;
            let mixed = w.lift(Factor::Fiber, &v2) * (2.0 * w.warp_derivative(p, &v1)? / f);
            let v2l = w.lift(Factor::Fiber, &v2);
            let normal = w.log_warp_gradient(p)? * m.inner(p, &v2l, &v2l)?;
            let rhs = w.lift(Factor::Base, &nabla1) + mixed - normal + w.lift(Factor::Fiber, &nabla2);
            Ok((m.norm(p, &(&lhs - &rhs))?, m.norm(p, &lhs)?, m.norm(p, &rhs)?))
        })
        .collect::<GeoResult<_>>()?;
    Ok(ExpansionResiduals {
        residual: rows.iter().map(|r| r.0).collect(),
        lhs_norm: rows.iter().map(|r| r.1).collect(),
        rhs_norm: rows.iter().map(|r| r.2).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use crate::rmap::ProductRiemannianMap;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    fn dv(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn straight_line() {
        let tr = integrate(&catalog::euclidean(2), &dv(&[0.0, 0.0]), &dv(&[1.0, 1.0]), 1.0, 0.01)
            .unwrap();
        for (t, p) in tr.times.iter().zip(&tr.points) {
            assert!((p - dv(&[*t, *t])).amax() < 1e-12);
        }
    }

    #[test]
    fn equator_stays_on_equator() {
        let s = catalog::sphere_model();
        let tr = integrate(s.manifold(), &dv(&[FRAC_PI_2, 0.0]), &dv(&[0.0, 1.0]), 5.0, 1e-3)
            .unwrap();
        let drift = tr.points.iter().map(|p| (p[0] - FRAC_PI_2).abs()).fold(0.0, f64::max);
        assert!(drift < 1e-8);
    }

    #[test]
    fn hyperbolic_semicircle() {
        let tr = integrate(&catalog::hyperbolic2(), &dv(&[0.0, 1.0]), &dv(&[1.0, 0.0]), 2.0, 1e-3)
            .unwrap();
        for p in &tr.points {
            assert!((p[0] * p[0] + p[1] * p[1] - 1.0).abs() < 1e-5);
        }
        assert!(tr.speed_drift() < 1e-6);
    }

    #[test]
    fn domain_exit_is_flagged() {
        let tr = integrate(&catalog::hyperbolic2(), &dv(&[0.0, 1.0]), &dv(&[1.0, 0.0]), 10.0, 1e-2)
            .unwrap();
        let t = tr.exit_time.expect("should leave y > 0.05");
        assert!(t > 3.0 && t < 4.5);
        assert!(tr.points.last().unwrap()[1] > 0.05);
    }

    #[test]
    fn oversized_step_is_rejected() {
        let err = integrate(&catalog::sphere2(), &dv(&[1.0, 0.0]), &dv(&[0.0, 30.0]), 2.0, 0.5);
        assert!(matches!(
            err,
            Err(GeoError::StepTooLarge { .. }) | Ok(GeodesicTrace { exit_time: Some(_), .. })
        ));
    }

    #[test]
    fn decompose_pure_and_equal_cases() {
        let s = catalog::sphere_model();
        let pi = ProductRiemannianMap::pi1(&s);
        let mut tr = GeodesicTrace::from_curve(
            s.manifold(),
            |t| (dv(&[FRAC_PI_2, t]), dv(&[1.0, 1.0])),
            0.0,
            0.1,
            0.05,
        )
        .unwrap();
        decompose(pi.whole(), &mut tr).unwrap();
        assert!((tr.omega[0] - FRAC_PI_4).abs() < 1e-12);
        assert_eq!(&tr.vertical[0] + &tr.horizontal[0], tr.velocities[0]);
    }

    #[test]
    fn latitude_circle_is_not_a_geodesic() {
        let s = catalog::sphere_model();
        let pi = ProductRiemannianMap::pi1(&s);
        let mut tr = GeodesicTrace::from_curve(
            s.manifold(),
            |t| (dv(&[FRAC_PI_4, t]), dv(&[0.0, 1.0])),
            0.0,
            1.0,
            1e-2,
        )
        .unwrap();
        decompose(pi.whole(), &mut tr).unwrap();
        let samples = curve_samples(pi.whole(), &tr).unwrap();
        let r = case_residuals(&samples, &tr, GeodesicCase::Vertical).unwrap();
        for h in &r.horizontal {
            assert!((h - 0.5).abs() < 1e-5);
        }
        assert!(matches!(
            case_residuals(&samples, &tr, GeodesicCase::Horizontal),
            Err(GeoError::CaseMismatch { case: 2, .. })
        ));
    }
}
