//! The invariant `e^{g∘γ} sin ω` along geodesics, the identity relating
//! `T(U,U) + A(Y,U)` to the rate of change of `ω`, and the fiber test
//! `T(U,U) = −g(U,U) ∇g`.

use std::f64::consts::PI;

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{GeoError, GeoResult};
use crate::geodesic::{self, CurveSample, GeodesicTrace};
use crate::manifold::ScalarField;
use crate::rmap::{random_unit_in, ProductRiemannianMap, RiemannianMap};

pub const CLAIRAUT_TOLERANCE: f64 = 1e-4;
/// Below this initial value the drift is measured absolutely.
pub const RELATIVE_FLOOR: f64 = 1e-8;

/// The canonical exponent for a warped-product projection: `ln f` as a
/// function of product coordinates.
pub fn auto_exponent(map: &ProductRiemannianMap) -> ScalarField {
    let w = map.source();
    let m1 = w.base().dim();
    let ln_f = w.warp().ln();
    let label = ln_f.label().to_string();
    ln_f.compose(label, move |p| p[..m1].to_vec())
}

#[derive(Debug, Clone, Serialize)]
pub struct InvariantSeries {
    pub values: Vec<f64>,
    pub initial: f64,
    pub max_abs_drift: f64,
    /// Relative to `|initial|`, or absolute when the initial value is ~0.
    pub drift: f64,
}

/// `e^{g(γ(t))} sin ω(t)` with `sin ω` clamped to `[0, 1]`.
pub fn invariant_series(trace: &GeodesicTrace, g: &ScalarField) -> GeoResult<InvariantSeries> {
    if !trace.is_decomposed() {
        return Err(GeoError::InvalidInput("trace has not been decomposed".into()));
    }
    let values = trace
        .points
        .iter()
        .zip(&trace.omega)
        .map(|(p, w)| Ok(g.eval(p.as_slice())?.exp() * w.sin().clamp(0.0, 1.0)))
        .collect::<GeoResult<Vec<f64>>>()?;
    let initial = values.first().copied().unwrap_or(0.0);
    let max_abs_drift = values
        .iter()
        .map(|v| (v - initial).abs())
        .fold(0.0, f64::max);
    let drift = if initial.abs() > RELATIVE_FLOOR {
        max_abs_drift / initial.abs()
    } else {
        max_abs_drift
    };
    Ok(InvariantSeries {
        values,
        initial,
        max_abs_drift,
        drift,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct AngleIdentity {
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    pub residual: Vec<f64>,
}

impl AngleIdentity {
    pub fn max(&self) -> f64 {
        self.residual.iter().copied().fold(0.0, f64::max)
    }
}

/// `g(T(U,U) + A(Y,U), Y)` against `b cos ω sin ω dω/dt`, the latter
/// evaluated as `−(b/2) d/dt cos²ω` so it stays smooth where `ω` has a
/// kink (pure horizontal or vertical instants).
pub fn angle_identity(samples: &[CurveSample], trace: &GeodesicTrace) -> AngleIdentity {
    let b0 = trace.speed_sq.first().copied().unwrap_or(0.0);
    let cos2: Vec<f64> = trace.omega.iter().map(|w| w.cos().powi(2)).collect();
    let dcos2 = geodesic::scalar_time_derivative(&trace.times, &cos2);
    let mut out = AngleIdentity {
        lhs: Vec::with_capacity(samples.len()),
        rhs: Vec::with_capacity(samples.len()),
        residual: Vec::with_capacity(samples.len()),
    };
    for (k, s) in samples.iter().enumerate() {
        let lhs = s.inner(&(&s.t_uu + &s.a_yu), &trace.horizontal[k]);
        let rhs = -0.5 * b0 * dcos2[k];
        out.lhs.push(lhs);
        out.rhs.push(rhs);
        out.residual.push((lhs - rhs).abs());
    }
    out
}

/// Outcome of the fiber test and, optionally, a sweep of geodesics.
#[derive(Debug, Clone, Serialize)]
pub struct ClairautReport {
    pub exponent: String,
    pub samples: usize,
    /// `max |T(U,U) + g(U,U) ∇g|` over unit vertical `U` of the whole map.
    pub umbilical: f64,
    /// Umbilicity of the first factor map's fibers, if it has any.
    pub factor1_umbilical: Option<f64>,
    /// `max |T|` on the second factor map's fibers, if it has any.
    pub factor2_geodesic: Option<f64>,
    pub tolerance: f64,
    pub verdict: bool,
}

pub fn clairaut_condition_check<R: Rng>(
    map: &ProductRiemannianMap,
    g: &ScalarField,
    samples: usize,
    rng: &mut R,
) -> GeoResult<ClairautReport> {
    let whole = map.whole();
    let m = whole.source();
    let n = m.dim();
    let w = map.source();
    let mut umbilical = 0.0_f64;
    let mut f1: Option<f64> = None;
    let mut f2: Option<f64> = None;
    let bump = |slot: &mut Option<f64>, v: f64| *slot = Some(slot.unwrap_or(0.0).max(v));
    for _ in 0..samples {
        let p = m.domain().sample(rng);
        let p = p.as_slice();
        let s = whole.splitting(p)?;
        if s.frame.vertical.is_empty() {
            return Err(GeoError::NoFibers(map.name().to_string()));
        }
        let grad = m.gradient(g, p)?;
        for _ in 0..4 {
            let u = random_unit_in(&s.frame.vertical, n, rng);
            let r = s.tensor_t(&u, &u) + &grad * s.frame.inner(&u, &u);
            umbilical = umbilical.max(s.frame.norm(&r));
        }
        let (p1, p2) = w.split_point(p);
        let s1 = map.factor1().splitting(p1)?;
        if !s1.frame.vertical.is_empty() {
            bump(&mut f1, s1.umbilical_residual()?);
        }
        let s2 = map.factor2().splitting(p2)?;
        if !s2.frame.vertical.is_empty() {
            bump(&mut f2, s2.fiber_t_norm());
        }
    }
    let verdict = umbilical <= CLAIRAUT_TOLERANCE
        && f1.map_or(true, |v| v <= CLAIRAUT_TOLERANCE)
        && f2.map_or(true, |v| v <= CLAIRAUT_TOLERANCE);
    Ok(ClairautReport {
        exponent: g.label().to_string(),
        samples,
        umbilical,
        factor1_umbilical: f1,
        factor2_geodesic: f2,
        tolerance: CLAIRAUT_TOLERANCE,
        verdict,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Launch {
    pub point: Vec<f64>,
    pub velocity: Vec<f64>,
    pub t_end: f64,
    pub dt: f64,
}

/// Ten unit-speed launches from the equator of the sphere model, at
/// angles `kπ/22` (k = 1..10) from the meridian.
pub fn oblique_sphere_launches(t_end: f64, dt: f64) -> Vec<Launch> {
    (1..=10)
        .map(|k| {
            let w0 = k as f64 * PI / 22.0;
            Launch {
                point: vec![PI / 2.0, 0.0],
                velocity: vec![w0.cos(), w0.sin()],
                t_end,
                dt,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct LaunchOutcome {
    pub launch: Launch,
    pub initial: f64,
    pub drift: f64,
    pub angle_identity: f64,
    /// `|e^g − I|` where `sin ω` peaks at 1 (the turning point), if reached.
    pub turning: Option<f64>,
    pub exit_time: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub outcomes: Vec<LaunchOutcome>,
    pub max_drift: f64,
    pub max_turning: Option<f64>,
    pub verdict: bool,
    /// Verdict true: every drift within tolerance. Verdict false: some
    /// drift at least ten times the tolerance.
    pub consistent: bool,
}

/// Integrate and split one launch.
pub fn run_launch(map: &RiemannianMap, launch: &Launch) -> GeoResult<GeodesicTrace> {
    let mut trace = geodesic::integrate(
        map.source(),
        &DVector::from_column_slice(&launch.point),
        &DVector::from_column_slice(&launch.velocity),
        launch.t_end,
        launch.dt,
    )?;
    geodesic::decompose(map, &mut trace)?;
    Ok(trace)
}

pub fn geodesic_sweep(
    map: &ProductRiemannianMap,
    g: &ScalarField,
    launches: &[Launch],
    verdict: bool,
) -> SweepReport {
    let outcomes: Vec<LaunchOutcome> = launches
        .par_iter()
        .map(|launch| {
            let run = || -> GeoResult<LaunchOutcome> {
                let trace = run_launch(map.whole(), launch)?;
                let inv = invariant_series(&trace, g)?;
                let samples = geodesic::curve_samples(map.whole(), &trace)?;
                Ok(LaunchOutcome {
                    launch: launch.clone(),
                    initial: inv.initial,
                    drift: inv.drift,
                    angle_identity: angle_identity(&samples, &trace).max(),
                    turning: turning_residual(&trace, &inv),
                    exit_time: trace.exit_time,
                    error: None,
                })
            };
            match run() {
                Ok(outcome) => outcome,
                Err(e) => LaunchOutcome {
                    launch: launch.clone(),
                    initial: f64::NAN,
                    drift: f64::NAN,
                    angle_identity: f64::NAN,
                    turning: None,
                    exit_time: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let max_drift = outcomes
        .iter()
        .map(|o| o.drift)
        .filter(|d| d.is_finite())
        .fold(0.0, f64::max);
    let max_turning = outcomes
        .iter()
        .filter_map(|o| o.turning)
        .reduce(f64::max);
    let all_ran = outcomes.iter().all(|o| o.error.is_none());
    let consistent = if verdict {
        all_ran && max_drift <= CLAIRAUT_TOLERANCE
    } else {
        max_drift >= 10.0 * CLAIRAUT_TOLERANCE
    };
    SweepReport {
        outcomes,
        max_drift,
        max_turning,
        verdict,
        consistent,
    }
}

/// At the sample where `sin ω` is largest, `e^g` against the initial
/// invariant; `None` if the geodesic never turns (`sin ω < 1 − 1e-6`).
pub fn turning_residual(trace: &GeodesicTrace, inv: &InvariantSeries) -> Option<f64> {
    let (k, s) = trace
        .omega
        .iter()
        .map(|w| w.sin())
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(&b.1))?;
    if s < 1.0 - 1e-6 {
        return None;
    }
    Some((inv.values[k] / s - inv.initial).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sphere_exponents() {
        let pi = ProductRiemannianMap::pi1(&catalog::sphere_model());
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let good = clairaut_condition_check(&pi, &auto_exponent(&pi), 10, &mut rng).unwrap();
        assert!(good.verdict, "{good:?}");
        assert_eq!(good.factor1_umbilical, None);
        assert!(good.factor2_geodesic.unwrap() < 1e-9);
        let theta = ScalarField::new("x1", |p| p[0]);
        let bad = clairaut_condition_check(&pi, &theta, 10, &mut rng).unwrap();
        assert!(!bad.verdict);
        assert!(bad.umbilical > 0.1);
    }

    #[test]
    fn identity_map_has_no_fibers() {
        let id = ProductRiemannianMap::identity(&catalog::sphere_model());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = ScalarField::constant(0.0);
        assert!(matches!(
            clairaut_condition_check(&id, &g, 2, &mut rng),
            Err(GeoError::NoFibers(_))
        ));
    }

    #[test]
    fn oblique_launch_invariant() {
        let pi = ProductRiemannianMap::pi1(&catalog::sphere_model());
        let launch = &oblique_sphere_launches(10.0, 1e-3)[4];
        let trace = run_launch(pi.whole(), launch).unwrap();
        assert!(trace.exit_time.is_none());
        let inv = invariant_series(&trace, &auto_exponent(&pi)).unwrap();
        assert!(inv.drift < 1e-5, "{}", inv.drift);
        let samples = geodesic::curve_samples(pi.whole(), &trace).unwrap();
        assert!(angle_identity(&samples, &trace).max() < 1e-3);
        // a great circle leaving the equator at ω0 turns at sin θ = sin ω0
        assert!(turning_residual(&trace, &inv).unwrap() < 1e-3);
    }
}
