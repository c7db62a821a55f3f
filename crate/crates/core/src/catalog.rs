//! Named manifolds, warped products and maps used by tests and scenarios.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{GeoError, GeoResult};
use crate::manifold::{ChartManifold, DomainBox, ScalarField};
use crate::rmap::{ProductRiemannianMap, RiemannianMap};
use crate::warped::WarpedProduct;

/// Margin kept between chart domains and coordinate singularities.
pub const CHART_MARGIN: f64 = 0.05;

pub fn euclidean(n: usize) -> ChartManifold {
    ChartManifold::from_fn(format!("euclidean:{n}"), DomainBox::unbounded(n), move |_| {
        DMatrix::identity(n, n)
    })
}

pub fn line() -> ChartManifold {
    euclidean(1).renamed("line")
}

/// Covering chart of the unit circle (the angle is not wrapped).
pub fn circle() -> ChartManifold {
    euclidean(1).renamed("circle")
}

pub fn interval(a: f64, b: f64) -> GeoResult<ChartManifold> {
    let domain = DomainBox::new(vec![a], vec![b])?;
    Ok(ChartManifold::from_fn(
        format!("interval({a},{b})"),
        domain,
        |_| DMatrix::identity(1, 1),
    ))
}

/// Flat plane in polar-type coordinates, `g = diag(1, x^2)`.
pub fn polar2() -> ChartManifold {
    let domain = DomainBox::new(
        vec![CHART_MARGIN, f64::NEG_INFINITY],
        vec![f64::INFINITY, f64::INFINITY],
    )
    .expect("static domain");
    ChartManifold::from_fn("polar2", domain, |p| {
        DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, p[0] * p[0]]))
    })
}

/// Unit sphere in colatitude/longitude, `g = diag(1, sin^2 θ)`.
pub fn sphere2() -> ChartManifold {
    let domain = DomainBox::new(
        vec![CHART_MARGIN, f64::NEG_INFINITY],
        vec![PI - CHART_MARGIN, f64::INFINITY],
    )
    .expect("static domain");
    ChartManifold::from_fn("sphere2", domain, |p| {
        let s = p[0].sin();
        DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, s * s]))
    })
}

/// Upper half-plane, `g = (dx^2 + dy^2) / y^2`.
pub fn hyperbolic2() -> ChartManifold {
    let domain = DomainBox::new(
        vec![f64::NEG_INFINITY, CHART_MARGIN],
        vec![f64::INFINITY, f64::INFINITY],
    )
    .expect("static domain");
    ChartManifold::from_fn("hyperbolic2", domain, |p| {
        let w = 1.0 / (p[1] * p[1]);
        DMatrix::from_diagonal(&DVector::from_column_slice(&[w, w]))
    })
}

/// Heisenberg group with `g = dx^2 + dy^2 + (dz - x dy)^2`.
pub fn heisenberg3() -> ChartManifold {
    ChartManifold::from_fn("heisenberg3", DomainBox::unbounded(3), |p| {
        let x = p[0];
        DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 0.0, 0.0, 0.0, 1.0 + x * x, -x, 0.0, -x, 1.0],
        )
    })
}

/// Names accepted by [`manifold`], alphabetized.
pub const MANIFOLD_NAMES: &[&str] = &[
    "circle",
    "euclidean:<n>",
    "heisenberg3",
    "hyperbolic2",
    "interval(a,b)",
    "line",
    "point",
    "polar2",
    "sphere2",
];

/// Resolve a catalog manifold by name.
pub fn manifold(name: &str) -> GeoResult<ChartManifold> {
    let name = name.trim();
    let unknown = || GeoError::InvalidInput(format!("unknown manifold `{name}`"));
    match name {
        "line" => return Ok(line()),
        "circle" => return Ok(circle()),
        "polar2" => return Ok(polar2()),
        "sphere2" => return Ok(sphere2()),
        "hyperbolic2" => return Ok(hyperbolic2()),
        "heisenberg3" => return Ok(heisenberg3()),
        "point" => return Ok(ChartManifold::point()),
        _ => {}
    }
    if let Some(n) = name.strip_prefix("euclidean:") {
        let n: usize = n.trim().parse().map_err(|_| unknown())?;
        if n == 0 {
            return Ok(ChartManifold::point());
        }
        return Ok(euclidean(n));
    }
    if let Some(rest) = name.strip_prefix("interval(") {
        let inner = rest.strip_suffix(')').ok_or_else(unknown)?;
        let mut parts = inner.split(',');
        let a = parts.next().and_then(|s| s.trim().parse::<f64>().ok());
        let b = parts.next().and_then(|s| s.trim().parse::<f64>().ok());
        return match (a, b, parts.next()) {
            (Some(a), Some(b), None) => interval(a, b),
            _ => Err(unknown()),
        };
    }
    Err(unknown())
}

/// `line x_1 euclidean:2`: a flat direct product.
pub fn flat_product() -> WarpedProduct {
    WarpedProduct::build(line(), euclidean(2), ScalarField::constant(1.0))
        .expect("constant warp is positive")
}

/// `interval(0.05, π−0.05) x_{sin x1} circle`: the round sphere.
pub fn sphere_model() -> WarpedProduct {
    let base = interval(CHART_MARGIN, PI - CHART_MARGIN).expect("static interval");
    WarpedProduct::build(base, circle(), ScalarField::new("sin(x1)", |p| p[0].sin()))
        .expect("sin is positive on the interval")
}

/// `line x_{e^x1} euclidean:2`: hyperbolic 3-space.
pub fn h3_model() -> WarpedProduct {
    WarpedProduct::build(line(), euclidean(2), ScalarField::new("exp(x1)", |p| p[0].exp()))
        .expect("exp is positive")
}

/// `line x_{cosh x1} line`: the hyperbolic plane in Fermi coordinates.
pub fn cosh_model() -> WarpedProduct {
    WarpedProduct::build(line(), line(), ScalarField::new("cosh(x1)", |p| p[0].cosh()))
        .expect("cosh is positive")
}

/// The Riemannian submersion `heisenberg3 -> euclidean:2`, `(x, y, z) -> (x, y)`.
pub fn heisenberg_submersion() -> RiemannianMap {
    RiemannianMap::new("heisenberg", heisenberg3(), euclidean(2), |p| {
        Ok(DVector::from_column_slice(&[p[0], p[1]]))
    })
}

/// `interval(0.05, π−0.05) x_{sin x1} sphere2`: the round 3-sphere.
pub fn s3_model() -> WarpedProduct {
    let base = interval(CHART_MARGIN, PI - CHART_MARGIN).expect("static interval");
    WarpedProduct::build(base, sphere2(), ScalarField::new("sin(x1)", |p| p[0].sin()))
        .expect("sin is positive on the interval")
}

/// The unit sphere in `euclidean:3`.
pub fn sphere_embedding() -> RiemannianMap {
    RiemannianMap::new("sphere_embedding", sphere2(), euclidean(3), |p| {
        let (t, f) = (p[0], p[1]);
        Ok(DVector::from_column_slice(&[
            t.sin() * f.cos(),
            t.sin() * f.sin(),
            t.cos(),
        ]))
    })
}

fn unwarped(base: ChartManifold, fiber: ChartManifold) -> WarpedProduct {
    WarpedProduct::build(base, fiber, ScalarField::constant(1.0)).expect("constant warp")
}

/// `sphere2 x_1 line -> euclidean:3 x_1 line`, embedding the base.
pub fn embedded_base_map() -> ProductRiemannianMap {
    ProductRiemannianMap::new(
        "embedded_base",
        unwarped(sphere2(), line()),
        unwarped(euclidean(3), line()),
        sphere_embedding(),
        RiemannianMap::identity(&line()),
    )
    .expect("dimensions agree")
}

/// `line x_1 sphere2 -> line x_1 euclidean:3`, embedding the fiber.
pub fn embedded_fiber_map() -> ProductRiemannianMap {
    ProductRiemannianMap::new(
        "embedded_fiber",
        unwarped(line(), sphere2()),
        unwarped(line(), euclidean(3)),
        RiemannianMap::identity(&line()),
        sphere_embedding(),
    )
    .expect("dimensions agree")
}

/// `line x_{e^x1} euclidean:2 -> line x_{e^x1} line`, `(x, y, z) -> (x, y)`.
pub fn h3_fiber_projection() -> ProductRiemannianMap {
    let target = WarpedProduct::build(line(), line(), ScalarField::new("exp(x1)", |p| p[0].exp()))
        .expect("exp is positive");
    let phi2 = RiemannianMap::new("drop_z", euclidean(2), line(), |p| {
        Ok(DVector::from_column_slice(&[p[0]]))
    });
    ProductRiemannianMap::new(
        "h3_fiber_projection",
        h3_model(),
        target,
        RiemannianMap::identity(&line()),
        phi2,
    )
    .expect("dimensions agree")
}
