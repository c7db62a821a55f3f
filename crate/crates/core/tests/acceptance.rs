//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fail.
//!
//! `cargo test --test acceptance`

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use warpgeo::catalog;
use warpgeo::clairaut::{self, Launch};
use warpgeo::curvature::{self, CurvatureItem, HatLabel, ItemFamily, Orientation, Stamp};
use warpgeo::geodesic::{self, GeodesicCase, GeodesicTrace};
use warpgeo::rmap;
use warpgeo::runner::{self, RunOptions};
use warpgeo::warped;
use warpgeo::{ChartManifold, LaplacianSign, ProductRiemannianMap, RiemannianMap, ScalarField};

type Outcome = Result<String, String>;

fn dv(xs: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(xs)
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn products() -> Vec<(&'static str, warpgeo::WarpedProduct)> {
    vec![
        ("flat", catalog::flat_product()),
        ("sphere", catalog::sphere_model()),
        ("h3", catalog::h3_model()),
    ]
}

fn connection_law() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0_f64;
    for (name, w) in products() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rep = warped::verify_connection_law(&w, 200, &mut rng).map_err(|e| format!("{name}: {e}"))?;
        worst = worst.max(rep.max_residual());
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(worst <= 1e-4 && secs < 10.0, || format!("residual {worst:e}, {secs:.1} s"))?;
    Ok(format!("max residual {worst:.2e} in {secs:.2} s"))
}

fn oneill_suite() -> Outcome {
    let mut maps: Vec<RiemannianMap> = products()
        .iter()
        .map(|(_, w)| ProductRiemannianMap::pi1(w).whole().clone())
        .collect();
    maps.push(catalog::heisenberg_submersion());
    let (mut alg, mut der) = (0.0_f64, 0.0_f64);
    for m in &maps {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rep = rmap::oneill_check(m, 50, &mut rng).map_err(|e| format!("{}: {e}", m.name()))?;
        alg = alg.max(rep.algebra_residual());
        der = der.max(rep.derivative_residual());
    }
    let h = catalog::heisenberg_submersion();
    let s = h.splitting(&[0.0, 0.0, 0.0]).map_err(|e| e.to_string())?;
    let a = s.frame.norm(&s.tensor_a(&s.frame.horizontal[0], &s.frame.horizontal[1]));
    ensure(alg <= 1e-5 && der <= 1e-4 && (a - 0.5).abs() <= 1e-4, || {
        format!("algebra {alg:e}, derivative {der:e}, Heisenberg |A| = {a}")
    })?;
    Ok(format!("algebra {alg:.1e}, derivative {der:.1e}, Heisenberg |A| = {a:.6}"))
}

/// Ten launches per manifold, slow enough to stay inside every chart for t <= 10.
fn launches_for(m: &ChartManifold, seed: u64) -> Vec<Launch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = m.dim();
    let centre: Vec<f64> = match m.name() {
        "hyperbolic2" => vec![0.0, 1.0],
        "polar2" => vec![2.0, 0.0],
        "sphere2" => vec![FRAC_PI_2, 0.0],
        name if name.starts_with("interval") => {
            let mut c = vec![FRAC_PI_2];
            c.extend(std::iter::repeat(0.0).take(n - 1));
            c
        }
        _ => vec![0.0; n],
    };
    (0..10)
        .map(|_| {
            let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = m.norm(&centre, &dv(&v)).unwrap();
            v.iter_mut().for_each(|x| *x *= 0.12 / norm);
            Launch {
                point: centre.clone(),
                velocity: v,
                t_end: 10.0,
                dt: 1e-3,
            }
        })
        .collect()
}

struct Catalogued {
    manifold: ChartManifold,
    map: Option<RiemannianMap>,
}

fn catalogued() -> Vec<Catalogued> {
    let plain = |m: ChartManifold| Catalogued { manifold: m, map: None };
    let mapped = |w: warpgeo::WarpedProduct| Catalogued {
        manifold: w.manifold().clone(),
        map: Some(ProductRiemannianMap::pi1(&w).whole().clone()),
    };
    vec![
        plain(catalog::euclidean(3)),
        plain(catalog::sphere2()),
        plain(catalog::hyperbolic2()),
        plain(catalog::polar2()),
        Catalogued {
            manifold: catalog::heisenberg3(),
            map: Some(catalog::heisenberg_submersion()),
        },
        mapped(catalog::flat_product()),
        mapped(catalog::sphere_model()),
        mapped(catalog::h3_model()),
        mapped(catalog::cosh_model()),
    ]
}

fn geodesic_suite() -> Outcome {
    let mut drift = 0.0_f64;
    for (i, c) in catalogued().iter().enumerate() {
        for l in launches_for(&c.manifold, 30 + i as u64) {
            let tr = geodesic::integrate(&c.manifold, &dv(&l.point), &dv(&l.velocity), l.t_end, l.dt)
                .map_err(|e| format!("{}: {e}", c.manifold.name()))?;
            ensure(tr.exit_time.is_none(), || format!("{} left its chart", c.manifold.name()))?;
            drift = drift.max(tr.speed_drift());
        }
    }
    let h = catalog::hyperbolic2();
    let err = |dt: f64| {
        let tr = geodesic::integrate(&h, &dv(&[0.0, 1.0]), &dv(&[1.0, 0.0]), 1.0, dt).unwrap();
        let (p, t) = (tr.points.last().unwrap(), *tr.times.last().unwrap());
        ((p[0] - t.tanh()).powi(2) + (p[1] - 1.0 / t.cosh()).powi(2)).sqrt()
    };
    let ratio = err(0.1) / err(0.05);

    // acceleration split on curves that are not geodesics
    let mut split = 0.0_f64;
    let curves: Vec<(warpgeo::WarpedProduct, Box<dyn Fn(f64) -> (DVector<f64>, DVector<f64>)>)> = vec![
        (
            catalog::sphere_model(),
            Box::new(|t: f64| (dv(&[1.2 + 0.3 * t.sin(), t * t]), dv(&[0.3 * t.cos(), 2.0 * t]))),
        ),
        (
            catalog::h3_model(),
            Box::new(|t: f64| {
                (dv(&[0.5 * t, t.cos(), t * t * t]), dv(&[0.5, -t.sin(), 3.0 * t * t]))
            }),
        ),
        (
            catalog::cosh_model(),
            Box::new(|t: f64| (dv(&[t.sin(), (2.0 * t).exp()]), dv(&[t.cos(), 2.0 * (2.0 * t).exp()]))),
        ),
    ];
    for (w, curve) in &curves {
        let tr = GeodesicTrace::from_curve(w.manifold(), curve, 0.0, 1.5, 1e-3).map_err(|e| e.to_string())?;
        split = split.max(geodesic::expansion_check(w, &tr).map_err(|e| e.to_string())?.max());
    }
    ensure(drift <= 1e-6 && (10.0..=24.0).contains(&ratio) && split <= 1e-3, || {
        format!("drift {drift:e}, order ratio {ratio:.2}, split {split:e}")
    })?;
    Ok(format!("speed drift {drift:.1e}, RK4 ratio {ratio:.2}, split residual {split:.1e}"))
}

fn case_suite() -> Outcome {
    let s = catalog::sphere_model();
    let pi = ProductRiemannianMap::pi1(&s);
    let mut worst = 0.0_f64;
    for (v, t_end, case) in [
        ([0.0, 1.0], 6.0, GeodesicCase::Vertical),
        ([1.0, 0.0], 1.2, GeodesicCase::Horizontal),
    ] {
        let launch = Launch {
            point: vec![FRAC_PI_2, 0.0],
            velocity: v.to_vec(),
            t_end,
            dt: 1e-3,
        };
        let tr = clairaut::run_launch(pi.whole(), &launch).map_err(|e| e.to_string())?;
        let samples = geodesic::curve_samples(pi.whole(), &tr).map_err(|e| e.to_string())?;
        worst = worst.max(geodesic::case_residuals(&samples, &tr, case).map_err(|e| e.to_string())?.max());
    }
    let mut tr = GeodesicTrace::from_curve(
        s.manifold(),
        |t| (dv(&[FRAC_PI_4, t]), dv(&[0.0, 1.0])),
        0.0,
        1.0,
        1e-2,
    )
    .map_err(|e| e.to_string())?;
    geodesic::decompose(pi.whole(), &mut tr).map_err(|e| e.to_string())?;
    let samples = geodesic::curve_samples(pi.whole(), &tr).map_err(|e| e.to_string())?;
    let lat = geodesic::case_residuals(&samples, &tr, GeodesicCase::Vertical).map_err(|e| e.to_string())?;
    let t_uu = lat.horizontal[0];
    ensure(worst <= 1e-3 && (t_uu - 0.5).abs() <= 0.01, || {
        format!("case residual {worst:e}, latitude |T(U,U)| = {t_uu}")
    })?;
    Ok(format!("case residual {worst:.1e}, latitude |T(U,U)| = {t_uu:.4}"))
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(format!("{name}.scenario"))
}

fn clairaut_suite() -> Outcome {
    let pi = ProductRiemannianMap::pi1(&catalog::sphere_model());
    let g = clairaut::auto_exponent(&pi);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cond = clairaut::clairaut_condition_check(&pi, &g, 100, &mut rng).map_err(|e| e.to_string())?;
    let sweep = clairaut::geodesic_sweep(&pi, &g, &clairaut::oblique_sphere_launches(10.0, 1e-3), cond.verdict);
    let ran = sweep.outcomes.iter().all(|o| o.error.is_none() && o.exit_time.is_none());
    let turning = sweep.max_turning.unwrap_or(f64::INFINITY);

    let h3 = ProductRiemannianMap::pi1(&catalog::h3_model());
    let gh = clairaut::auto_exponent(&h3);
    let cond_h3 = clairaut::clairaut_condition_check(&h3, &gh, 100, &mut rng).map_err(|e| e.to_string())?;
    let umb = cond.umbilical.max(cond_h3.umbilical);

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let opts = RunOptions {
        out_dir: Some(dir.path().to_path_buf()),
        ..Default::default()
    };
    let neg = runner::run_file(&scenario("negative_control"), &opts).map_err(|e| e.to_string())?;
    let check = &neg.report.checks[0];
    let neg_ok = neg.exit_code == 1
        && check.details["verdict"] == false
        && check.details["max_drift"].as_f64().unwrap_or(0.0) > check.tolerance;

    ensure(ran && sweep.max_drift <= 1e-4 && turning <= 1e-3 && umb <= 1e-4 && neg_ok, || {
        format!(
            "drift {:e}, turning {turning:e}, umbilical {umb:e}, all ran {ran}, negative control ok {neg_ok}",
            sweep.max_drift
        )
    })?;
    Ok(format!(
        "drift {:.1e}, turning {turning:.1e}, umbilical {umb:.1e}, negative control exit {}",
        sweep.max_drift, neg.exit_code
    ))
}

fn angle_suite() -> Outcome {
    let mut worst = 0.0_f64;
    let mut count = 0;
    for (i, c) in catalogued().iter().enumerate() {
        let Some(map) = &c.map else { continue };
        for l in launches_for(&c.manifold, 30 + i as u64) {
            let tr = clairaut::run_launch(map, &l).map_err(|e| e.to_string())?;
            let samples = geodesic::curve_samples(map, &tr).map_err(|e| e.to_string())?;
            worst = worst.max(clairaut::angle_identity(&samples, &tr).max());
            count += 1;
        }
    }
    let pi = ProductRiemannianMap::pi1(&catalog::sphere_model());
    for l in clairaut::oblique_sphere_launches(10.0, 1e-3) {
        let tr = clairaut::run_launch(pi.whole(), &l).map_err(|e| e.to_string())?;
        let samples = geodesic::curve_samples(pi.whole(), &tr).map_err(|e| e.to_string())?;
        worst = worst.max(clairaut::angle_identity(&samples, &tr).max());
        count += 1;
    }
    ensure(worst <= 1e-3, || format!("residual {worst:e}"))?;
    Ok(format!("max residual {worst:.1e} over {count} geodesics"))
}

fn curvature_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut sph, mut hyp, mut h3, mut sym) = (0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64);
    let s = catalog::sphere2();
    let h = catalog::hyperbolic2();
    let w = catalog::h3_model();
    for _ in 0..20 {
        let p = s.domain().sample(&mut rng);
        let k = curvature::sectional(&s, p.as_slice(), &dv(&[1.0, 0.0]), &dv(&[0.3, 1.0])).map_err(|e| e.to_string())?;
        sph = sph.max((k - 1.0).abs());
        let p = h.domain().sample(&mut rng);
        let k = curvature::sectional(&h, p.as_slice(), &dv(&[1.0, 0.2]), &dv(&[0.0, 1.0])).map_err(|e| e.to_string())?;
        hyp = hyp.max((k + 1.0).abs());
        let p = w.manifold().domain().sample(&mut rng);
        let c = curvature::CurvatureAt::compute(w.manifold(), p.as_slice()).map_err(|e| e.to_string())?;
        for _ in 0..5 {
            let x = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
            let y = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
            h3 = h3.max((c.sectional(&x, &y).map_err(|e| e.to_string())? + 1.0).abs());
        }
    }
    for c in catalogued() {
        for _ in 0..10 {
            let p = c.manifold.domain().sample(&mut rng);
            let r = curvature::bianchi_and_symmetry_check(&c.manifold, p.as_slice()).map_err(|e| e.to_string())?;
            sym = sym.max(r.max());
        }
    }
    ensure(sph <= 1e-4 && hyp <= 1e-4 && h3 <= 1e-3 && sym <= 1e-4, || {
        format!("sphere {sph:e}, hyperbolic {hyp:e}, H3 {h3:e}, symmetries {sym:e}")
    })?;
    Ok(format!("sphere {sph:.1e}, hyperbolic {hyp:.1e}, H3 {h3:.1e}, symmetries {sym:.1e}"))
}

fn curvature_items() -> Outcome {
    let item = |f, n| CurvatureItem::new(f, n).unwrap();
    let eval = |it, map: &ProductRiemannianMap, g: &ScalarField, pts: &[Vec<f64>]| {
        curvature::evaluate_at_points(it, map, g, pts).map_err(|e| format!("{it}: {e}"))
    };
    let h3_pts = vec![vec![0.0, 0.0, 0.0], vec![0.3, -0.5, 0.7], vec![-0.4, 1.0, 0.2]];
    let h3 = ProductRiemannianMap::pi1(&catalog::h3_model());
    let g = clairaut::auto_exponent(&h3);
    let zero = ScalarField::constant(0.0);

    // Laplacian sign: select on H3, hold fixed on line x_cosh line
    let reps = eval(item(ItemFamily::Ricci, 2), &h3, &g, &h3_pts)?;
    let stamp = curvature::consistent_stamp(&reps).ok_or("no Laplacian sign selected on H3")?;
    let mut worst = reps.iter().map(|r| r.residual).fold(0.0, f64::max);
    let cosh = ProductRiemannianMap::pi1(&catalog::cosh_model());
    let gc = clairaut::auto_exponent(&cosh);
    for r in eval(item(ItemFamily::Ricci, 2), &cosh, &gc, &[vec![0.0, 0.0], vec![0.5, 1.0], vec![-0.7, -0.3]])? {
        worst = worst.max(r.candidate(stamp).map_or(f64::INFINITY, |c| c.residual));
    }
    let hat = Stamp::Hat(HatLabel::FactorIntrinsic);
    for r in eval(item(ItemFamily::Sectional, 2), &h3, &g, &h3_pts)? {
        worst = worst.max(r.candidate(hat).map_or(f64::INFINITY, |c| c.residual));
    }
    for r in eval(item(ItemFamily::Sectional, 6), &catalog::h3_fiber_projection(), &zero, &h3_pts)? {
        worst = worst.max(r.residual);
    }

    // orientation items: both candidates present, one stamp at every point
    let gauss = Stamp::Orientation(Orientation::Gauss);
    let literal = Stamp::Orientation(Orientation::Literal);
    let factor_pts = vec![vec![1.0, 0.5, 0.0], vec![2.0, -1.0, 3.0]];
    let fiber_pts = vec![vec![0.0, 1.0, 0.5], vec![3.0, 2.0, -1.0]];
    let orientation = [
        (item(ItemFamily::Sectional, 1), eval(item(ItemFamily::Sectional, 1), &h3, &g, &h3_pts)?),
        (item(ItemFamily::Sectional, 3), eval(item(ItemFamily::Sectional, 3), &catalog::embedded_base_map(), &zero, &factor_pts)?),
        (item(ItemFamily::Sectional, 4), eval(item(ItemFamily::Sectional, 4), &h3, &g, &h3_pts)?),
        (item(ItemFamily::Sectional, 5), eval(item(ItemFamily::Sectional, 5), &catalog::embedded_fiber_map(), &zero, &fiber_pts)?),
    ];
    let mut stamps = Vec::new();
    for (it, reps) in &orientation {
        let complete = reps.iter().all(|r| r.candidate(gauss).is_some() && r.candidate(literal).is_some());
        let chosen = curvature::consistent_stamp(reps);
        ensure(complete && chosen == Some(gauss), || format!("{it}: complete {complete}, stamp {chosen:?}"))?;
        stamps.push(format!("{it}={}", gauss));
    }
    ensure(worst <= 1e-3 && stamp == Stamp::Laplacian(LaplacianSign::Minus), || {
        format!("residual {worst:e}, stamp {stamp}")
    })?;
    Ok(format!("residual {worst:.1e} under {stamp}; {}", stamps.join(" ")))
}

fn without_timestamp(path: &Path) -> Result<serde_json::Value, String> {
    let text = fs::read_to_string(path).map_err(|e| e.to_string())?;
    let mut v: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    v.as_object_mut().ok_or("report is not an object")?.remove("timestamp");
    Ok(v)
}

fn determinism() -> Outcome {
    let start = Instant::now();
    let mut names: Vec<PathBuf> = fs::read_dir(Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios"))
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "scenario"))
        .collect();
    names.sort();
    let dirs = [tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?];
    let mut outcomes = Vec::new();
    for d in &dirs {
        let opts = RunOptions {
            out_dir: Some(d.path().to_path_buf()),
            ..Default::default()
        };
        outcomes = names
            .iter()
            .map(|n| runner::run_file(n, &opts).map_err(|e| format!("{}: {e}", n.display())))
            .collect::<Result<Vec<_>, _>>()?;
    }
    let secs = start.elapsed().as_secs_f64() / 2.0;
    let mut files = 0;
    for o in &outcomes {
        let expected = if o.report.scenario == "negative_control" { 1 } else { 0 };
        ensure(o.exit_code == expected, || format!("{} exited {}", o.report.scenario, o.exit_code))?;
        for t in &o.trace_paths {
            let name = t.file_name().unwrap();
            let a = fs::read(dirs[0].path().join(name)).map_err(|e| e.to_string())?;
            let b = fs::read(dirs[1].path().join(name)).map_err(|e| e.to_string())?;
            ensure(a == b, || format!("{} differs", name.to_string_lossy()))?;
            files += 1;
        }
        let name = o.report_path.file_name().unwrap();
        ensure(
            without_timestamp(&dirs[0].path().join(name))? == without_timestamp(&dirs[1].path().join(name))?,
            || format!("{} differs", name.to_string_lossy()),
        )?;
        files += 1;
    }
    ensure(secs < 120.0, || format!("suite took {secs:.1} s"))?;
    Ok(format!("{} scenarios, {files} files identical, {secs:.1} s per suite run", names.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("connection law", connection_law),
        ("O'Neill tensors", oneill_suite),
        ("geodesics", geodesic_suite),
        ("geodesic cases", case_suite),
        ("Clairaut", clairaut_suite),
        ("angle identity", angle_suite),
        ("curvature oracle", curvature_oracle),
        ("curvature items", curvature_items),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let res = f();
        let secs = start.elapsed().as_secs_f64();
        match res {
            Ok(msg) => println!("criterion {}: PASS {name}: {msg} [{secs:.1} s]", i + 1),
            Err(msg) => {
                failed += 1;
                println!("criterion {}: FAIL {name}: {msg} [{secs:.1} s]", i + 1);
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} criteria failed");
        std::process::exit(1);
    }
}
