//! Randomised invariants across the modules.

use std::f64::consts::TAU;

use anosov::billiard::{billiard_flow, BilliardState};
use anosov::contour::{trace_level_set, Grid};
use anosov::experiments::ConvergenceRow;
use anosov::geodesic::{integrate, random_initial, time_reversal_error, RunOptions};
use anosov::horizon::HorizonReport;
use anosov::hyperbolicity::{anosov_certificate, estimate_kappa, CertificateConfig, CertificateReport, KappaEstimate, KappaSampling, SurfaceSource};
use anosov::linkage::{build_table, chart_lift, implicit_g, LinkageParams, LinkageSurface, SheetId, RADICAND_TOL};
use anosov::rng::stream_rng;
use anosov::surface::{darboux_along, FlattenedSurface, ImplicitSurface, SurfaceSampler};
use anosov::torus::CosineSum;
use anosov::{segment_curve_crossing, torus_distance, CurveField, LiftedSegment, TorusPoint};
use nalgebra::{Vector2, Vector3};
use proptest::prelude::*;

fn params(eps: f64) -> LinkageParams {
    LinkageParams::new(2.8, 0.4, eps)
}

fn surface(eps: f64) -> FlattenedSurface<LinkageSurface> {
    implicit_g(&params(eps)).unwrap()
}

fn sheet(i: usize) -> SheetId {
    SheetId::ALL[i % 4]
}

/// Unscaled surface points drawn from `count` streams of `seed`.
fn surface_points(s: &FlattenedSurface<LinkageSurface>, seed: u64, count: usize) -> Vec<Vector3<f64>> {
    let mut rng = stream_rng(seed, 0);
    (0..count).filter_map(|_| s.surface.sample_point(&mut rng)).collect()
}

fn all_crossings(seg: &LiftedSegment, wall: &dyn CurveField, level: f64) -> Option<Vec<Vector2<f64>>> {
    let mut out = Vec::new();
    let mut start = 0.0;
    loop {
        let rest = LiftedSegment::new(seg.at(start), seg.direction, seg.length - start);
        match segment_curve_crossing(&rest, wall, level) {
            Ok(Some(c)) => {
                start += c.t;
                out.push(c.point);
                if seg.length - start < 1e-9 {
                    return Some(out);
                }
            }
            Ok(None) => return Some(out),
            Err(_) => return None,
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn crossing_lands_on_the_level(x in 0.0..TAU, y in 0.0..TAU, a in 0.0..TAU, len in 0.1..8.0f64, level in -1.5..1.5f64) {
        let wall = CosineSum { a: 1.0, b: 1.0 };
        let seg = LiftedSegment::new(Vector2::new(x, y), Vector2::new(a.cos(), a.sin()), len);
        if let Ok(Some(c)) = segment_curve_crossing(&seg, &wall, level) {
            prop_assert!((wall.value(&c.point) - level).abs() <= 1e-12);
            prop_assert!(c.t > 0.0 && c.t <= len);
        }
    }

    #[test]
    fn reversed_segment_meets_the_same_points(x in 0.0..TAU, y in 0.0..TAU, a in 0.0..TAU, len in 0.1..8.0f64, level in -1.5..1.5f64) {
        let wall = CosineSum { a: 1.0, b: -1.0 };
        let seg = LiftedSegment::new(Vector2::new(x, y), Vector2::new(a.cos(), a.sin()), len);
        let fwd = all_crossings(&seg, &wall, level);
        let back = all_crossings(&seg.reversed(), &wall, level);
        prop_assume!(fwd.is_some() && back.is_some());
        let (fwd, mut back) = (fwd.unwrap(), back.unwrap());
        // an endpoint on the level is a crossing in one direction only
        let on_level = |p: &Vector2<f64>| (p - seg.start).norm() < 1e-8 || (p - seg.end()).norm() < 1e-8;
        let fwd: Vec<_> = fwd.into_iter().filter(|p| !on_level(p)).collect();
        back.retain(|p| !on_level(p));
        back.reverse();
        prop_assert_eq!(fwd.len(), back.len());
        for (p, q) in fwd.iter().zip(&back) {
            prop_assert!((p - q).norm() < 1e-9, "{:?} vs {:?}", p, q);
        }
    }

    #[test]
    fn lift_then_project_is_identity(theta in -20.0..20.0f64, phi in -20.0..20.0f64) {
        let p = TorusPoint::new(theta, phi);
        let q = TorusPoint::from_lift(&p.lift());
        prop_assert!((p.theta - q.theta).abs() <= 1e-14 && (p.phi - q.phi).abs() <= 1e-14);
    }

    #[test]
    fn chart_lift_satisfies_the_constraints(theta in 0.0..TAU, phi in 0.0..TAU, s in 0usize..4) {
        let p = params(0.05);
        if let Ok(cfg) = chart_lift(&p, &TorusPoint::new(theta, phi), sheet(s)) {
            prop_assert!(cfg.max_residual(p.l, p.r) <= 1e-12);
        }
    }

    #[test]
    fn sheets_exist_exactly_over_the_table(theta in 0.0..TAU, phi in 0.0..TAU) {
        let p = params(0.05);
        let table = build_table(&p).unwrap();
        let x = Vector2::new(theta, phi);
        let lifts = (0..4).filter(|&s| chart_lift(&p, &TorusPoint::new(theta, phi), sheet(s)).is_ok()).count();
        let ind = table.indicator(&x);
        if ind < -1e-8 {
            prop_assert_eq!(lifts, 4);
        } else if ind > 1e-8 {
            prop_assert_eq!(lifts, 0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn billiard_flow_composes(theta in 0.0..TAU, phi in 0.0..TAU, a in 0.0..TAU, s in 0.5..10.0f64, t in 0.5..10.0f64) {
        let table = build_table(&params(0.05)).unwrap();
        let q = TorusPoint::new(theta, phi);
        prop_assume!(table.indicator(&q.lift()) < -0.05);
        let st = BilliardState::from_angle(q, a);
        let whole = billiard_flow(&table, &st, s + t);
        let first = billiard_flow(&table, &st, s);
        prop_assume!(whole.is_ok() && first.is_ok());
        let (whole, first) = (whole.unwrap(), first.unwrap());
        prop_assume!(whole.bounces.iter().all(|b| !b.grazing));
        let rest = billiard_flow(&table, &first.state, t);
        prop_assume!(rest.is_ok());
        let rest = rest.unwrap();
        prop_assert!((whole.state.p.norm() - 1.0).abs() <= 1e-15);
        prop_assert!(torus_distance(&whole.state.q, &rest.state.q) < 1e-8);
        prop_assert!((whole.state.p - rest.state.p).norm() < 1e-8);
    }

    #[test]
    fn normal_formulas_agree(seed in any::<u64>()) {
        let s = surface(0.05);
        for x in surface_points(&s, seed, 400) {
            let local = s.local_at(&x);
            let Ok(q) = local.point(x) else { continue };
            let (a, b) = local.normal_epsilon_both(&q).unwrap();
            prop_assert!((a - b).norm() <= 1e-9 || (a + b).norm() <= 1e-9);
            prop_assert!((a.norm() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn normal_curvature_sign_persists_under_flattening(seed in any::<u64>()) {
        let s = surface(1.0);
        let mut rng = stream_rng(seed, 1);
        for x in surface_points(&s, seed, 40) {
            let local = s.local_at(&x);
            let n = local.unit_normal(&x).unwrap();
            let (e1, e2) = anosov::surface::tangent_basis(&n);
            let a = anosov::hyperbolicity::random_angle(&mut rng);
            let v = e1 * a.cos() + e2 * a.sin();
            let g1 = local.gamma_n(&x, &v).unwrap();
            if g1.abs() <= 1e-6 {
                continue;
            }
            for eps in [0.5, 0.1, 0.02] {
                let f = local.with_epsilon(eps);
                let xs = f.scale(&x);
                let vs = f.scale(&v).normalize();
                let g = f.gamma_n(&xs, &vs).unwrap();
                prop_assert_eq!(g.signum(), g1.signum(), "eps {} at {:?}", eps, x);
            }
        }
    }

    #[test]
    fn linkage_metric_is_nondegenerate(seed in any::<u64>(), eps in 0.01..1.0f64) {
        let s = surface(eps);
        let table = build_table(&params(eps)).unwrap();
        for x in surface_points(&s, seed, 200) {
            if table.indicator(&Vector2::new(x[0], x[1])) > -1e-3 {
                continue;
            }
            let g = s.local_at(&x).surface.gradient(&x);
            // graph chart c(θ, φ): metric I + ε²∇c∇cᵀ
            let dc = Vector2::new(-g[0] / g[2], -g[1] / g[2]);
            let det = 1.0 + eps * eps * dc.norm_squared();
            prop_assert!(det.is_finite() && det >= 1.0);
        }
    }
}

#[test]
fn table_boundary_has_three_components() {
    let table = build_table(&params(0.05)).unwrap();
    let f = |x: &Vector2<f64>| table.indicator(x);
    let set = trace_level_set(&f, &Grid::torus(256));
    assert_eq!(set.components.len(), 3);
    assert!(set.components.iter().all(|c| c.closed));
}

// Sheets meet where a radicand vanishes, so their values differ by twice the
// square root of its rounding error. The test bounds that radicand.
#[test]
fn sheets_glue_along_the_walls() {
    let p = params(0.05);
    let table = build_table(&p).unwrap();
    let radicand_at = |x: &Vector2<f64>, a: SheetId, b: SheetId| {
        let q = TorusPoint::from_lift(x);
        let gap = chart_lift(&p, &q, a).unwrap().c - chart_lift(&p, &q, b).unwrap().c;
        gap * gap / 4.0
    };
    // {u = l}: e vanishes, equal offset signs meet
    for x in table.wall_points(0, 200).unwrap() {
        assert!(radicand_at(&x, SheetId::new(1, 1), SheetId::new(-1, 1)) <= RADICAND_TOL);
        assert!(radicand_at(&x, SheetId::new(1, -1), SheetId::new(-1, -1)) <= RADICAND_TOL);
    }
    // {v = ±r}: the offset vanishes, equal e signs meet
    for w in [1, 2] {
        for x in table.wall_points(w, 200).unwrap() {
            assert!(radicand_at(&x, SheetId::new(1, 1), SheetId::new(1, -1)) <= RADICAND_TOL);
            assert!(radicand_at(&x, SheetId::new(-1, 1), SheetId::new(-1, -1)) <= RADICAND_TOL);
        }
    }
}

// H = G_z/|∇G| as an ambient function; its tangential gradient is the
// gradient of the restriction.
fn h_ambient<S: ImplicitSurface>(s: &S, x: &Vector3<f64>) -> f64 {
    let g = s.gradient(x);
    g[2] / g.norm()
}

fn zone_points(s: &FlattenedSurface<LinkageSurface>, delta: f64, want: usize) -> Vec<(Vector3<f64>, FlattenedSurface<LinkageSurface>)> {
    let mut rng = stream_rng(21, 0);
    let mut out = Vec::new();
    while out.len() < want {
        let Some(x) = s.surface.sample_point(&mut rng) else { continue };
        let local = s.local_at(&x);
        if h_ambient(&local.surface, &x).abs() <= delta {
            out.push((x, local));
        }
    }
    out
}

#[test]
fn height_function_is_a_submersion_near_the_walls() {
    let s = surface(0.05);
    let mut worst = f64::INFINITY;
    for (x, local) in zone_points(&s, 0.1, 2000) {
        let n = local.unit_normal(&x).unwrap();
        let h = 1e-6;
        let grad = Vector3::from_fn(|i, _| {
            let e = Vector3::ith(i, h);
            (h_ambient(&local.surface, &(x + e)) - h_ambient(&local.surface, &(x - e))) / (2.0 * h)
        });
        let tangential = grad - n * grad.dot(&n);
        worst = worst.min(tangential.norm());
    }
    assert!(worst > 0.05, "{worst}");
}

#[test]
fn gaussian_curvature_is_negative_near_the_walls() {
    for eps in [0.05, 0.02] {
        let s = surface(eps);
        for (x, local) in zone_points(&s, 0.1, 10_000) {
            let k = local.gauss_k_scaled(&local.scale(&x)).unwrap();
            assert!(k < 0.0, "eps {eps}: K = {k} at {x:?}");
        }
    }
}

#[test]
fn geodesics_have_no_geodesic_curvature() {
    let s = surface(0.1);
    let h = 2.5e-4;
    let mut worst: f64 = 0.0;
    for i in 0..10 {
        let mut rng = stream_rng(4, i);
        let s0 = random_initial(&s, &mut rng).unwrap();
        let out = integrate(&s, &s0, 1.0, &RunOptions { stride: Some(h), ..Default::default() }).unwrap();
        // undo the periodic reduction of the horizontal coordinates
        let mut pts: Vec<Vector3<f64>> = out.samples.iter().map(|p| p.q).collect();
        for k in 1..pts.len() {
            let prev = pts[k - 1];
            for c in 0..2 {
                pts[k][c] -= TAU * ((pts[k][c] - prev[c]) / TAU).round();
            }
        }
        for w in pts.windows(41).step_by(40) {
            let local = s.local_at(&s.unscale(&w[20]));
            let fine = darboux_along(&local, w, h).unwrap();
            let sparse: Vec<Vector3<f64>> = w.iter().step_by(2).copied().collect();
            let coarse = darboux_along(&local, &sparse, 2.0 * h).unwrap();
            // Richardson step removes the O(h²) difference error
            for c in &coarse {
                let f = &fine[2 * c.index - 1];
                let g = (4.0 * f.gamma_g - c.gamma_g) / 3.0;
                worst = worst.max(g.abs() / (1.0 + f.curvature));
            }
        }
    }
    assert!(worst <= 1e-4, "{worst}");
}

#[test]
fn short_time_reversal_returns_home() {
    let s = surface(0.05);
    for i in 0..20 {
        let mut rng = stream_rng(9, i);
        let s0 = random_initial(&s, &mut rng).unwrap();
        let err = time_reversal_error(&s, &s0, 5.0, None).unwrap();
        assert!(err <= 1e-6, "run {i}: {err}");
    }
}

#[test]
fn riccati_matches_jacobi_ratio() {
    let s = surface(0.1);
    for i in 0..10 {
        let mut rng = stream_rng(12, i);
        let s0 = random_initial(&s, &mut rng).unwrap();
        let out = integrate(&s, &s0, 3.0, &RunOptions { record_steps: true, ..Default::default() }).unwrap();
        for r in out.steps.iter().take_while(|r| out.blowup_at.is_none_or(|b| r.t < b - 1e-3)) {
            assert!((r.u - r.jacobi_u).abs() <= 1e-5 * (1.0 + r.u.abs()), "t {}: {} vs {}", r.t, r.u, r.jacobi_u);
        }
    }
}

#[test]
fn certificate_margin_improves_as_epsilon_shrinks() {
    let base = surface(0.05);
    let mut margins = Vec::new();
    for eps in [0.05, 0.025, 0.0125] {
        let s = base.with_epsilon(eps);
        let k = estimate_kappa(&s, 0.8, eps, &KappaSampling { samples: 4000, boundary_samples: 400, seed: 2 }, None);
        let cc = CertificateConfig { delta: 0.8, epsilon: eps, n_samples: 20, time: 1.0, horizon_t_max: 10.82, homothety: None, seed: 2 };
        let rep = anosov_certificate(&SurfaceSource { surf: &s, options: None }, k.kappa, &cc).unwrap();
        margins.push(rep.margin);
    }
    assert!(margins.windows(2).all(|w| w[1] >= w[0]), "{margins:?}");
}

#[test]
fn near_straight_threshold_shrinks_with_epsilon() {
    let base = surface(0.1);
    let mut thresholds = Vec::new();
    for eps in [0.1, 0.05, 0.025] {
        let s = base.with_epsilon(eps);
        let kappa = estimate_kappa(&s, 0.8, eps, &KappaSampling { samples: 4000, boundary_samples: 400, seed: 6 }, None).kappa;
        let mut worst: f64 = 0.0;
        for i in 0..40 {
            let mut rng = stream_rng(6, i);
            let s0 = random_initial(&s, &mut rng).unwrap();
            let out = integrate(&s, &s0, 1.0, &RunOptions { stride: Some(1e-3), ..Default::default() }).unwrap();
            if out.integral_abs_k > 3.0 * kappa * kappa {
                continue;
            }
            let mid: Vec<_> = out.samples.iter().filter(|p| (1.0 / 3.0..=2.0 / 3.0).contains(&p.t)).collect();
            let p0 = mid[0].p;
            worst = mid.iter().map(|p| (p.p - p0).norm()).fold(worst, f64::max);
        }
        thresholds.push(worst);
    }
    assert!(thresholds.windows(2).all(|w| w[1] <= w[0] * 1.05), "{thresholds:?}");
}

#[test]
fn reports_round_trip_through_json() {
    let s = surface(0.05);
    let k = estimate_kappa(&s, 0.8, 0.05, &KappaSampling { samples: 500, boundary_samples: 50, seed: 1 }, None);
    let cc = CertificateConfig { delta: 0.8, epsilon: 0.05, n_samples: 4, time: 1.0, horizon_t_max: 10.82, homothety: None, seed: 1 };
    let rep = anosov_certificate(&SurfaceSource { surf: &s, options: None }, k.kappa, &cc).unwrap();
    let text = anosov::export::to_json(&rep, 1).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    for key in ["rng", "seed", "delta", "epsilon", "kappa", "n_samples", "min_u", "pass", "blowup_count", "runtime"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    let back: CertificateReport = serde_json::from_value(v).unwrap();
    assert_eq!(back.min_u, rep.min_u);
    let kj: KappaEstimate = serde_json::from_str(&serde_json::to_string(&k).unwrap()).unwrap();
    assert_eq!(kj, k);
    let row = ConvergenceRow { epsilon: 0.1, sup_dist: 0.5, n_points: 3, excluded_grazing: 0 };
    let _: ConvergenceRow = serde_json::from_str(&serde_json::to_string(&row).unwrap()).unwrap();
    let h = HorizonReport { t_max: 50.0, max_free_flight: 10.0, witness: None, slope_one_max: 7.0, directions: 1, lines: 1 };
    assert_eq!(serde_json::from_str::<HorizonReport>(&serde_json::to_string(&h).unwrap()).unwrap(), h);
}
