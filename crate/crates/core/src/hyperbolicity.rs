//! Riccati certificates of hyperbolicity along geodesics of `Σ_ε`.
//!
//! Along a unit-speed geodesic the Riccati solution `u′ = −K − u²`,
//! `u(0) = 0` stays positive and bounded below after a fixed time on every
//! geodesic exactly when the flow is uniformly hyperbolic in the sense used
//! here. The certificate checks `u(T) ≥ κ²/2` after rescaling the surface so
//! that free flights last less than `T/3`.

use std::f64::consts::{FRAC_PI_2, TAU};

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodesic::{integrate, random_initial, GeodesicOptions, GeodesicState, RunOptions};
use crate::ode::{dopri_step, step_factor, State, Tolerance};
use crate::rng::stream_rng;
use crate::surface::{project_unscaled, FlattenedSurface, ImplicitSurface, SurfaceSampler};

/// `|u|` above this counts as a blowup.
pub const BLOWUP_LEVEL: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RiccatiTrace {
    pub times: Vec<f64>,
    pub u: Vec<f64>,
    #[serde(rename = "K_along")]
    pub k_along: Vec<f64>,
    pub blowup_at: Option<f64>,
}

impl RiccatiTrace {
    pub fn u_end(&self) -> f64 {
        self.u.last().copied().unwrap_or(0.0)
    }
}

/// Co-integrates a geodesic from `s0` and its Riccati solution for arclength `t_end`.
pub fn riccati_along<S: ImplicitSurface + Clone>(surf: &FlattenedSurface<S>, s0: &GeodesicState, t_end: f64) -> Result<RiccatiTrace> {
    let out = integrate(surf, s0, t_end, &RunOptions { record_steps: true, ..Default::default() })?;
    Ok(RiccatiTrace {
        times: out.steps.iter().map(|s| s.t).collect(),
        u: out.steps.iter().map(|s| s.u).collect(),
        k_along: out.steps.iter().map(|s| s.k).collect(),
        blowup_at: out.blowup_at,
    })
}

/// Riccati solution for a prescribed curvature `k(t)`, sampled every `stride`.
pub fn riccati_for_curvature(k: &(dyn Fn(f64) -> f64 + Sync), t_end: f64, stride: f64) -> RiccatiTrace {
    let f = |t: f64, y: &State<1>| {
        let (s, c) = y[0].sin_cos();
        State::<1>::new(-k(t) * c * c - s * s)
    };
    let tol = Tolerance { rtol: 1e-13, atol: 1e-13 };
    let mut trace = RiccatiTrace { times: vec![0.0], u: vec![0.0], k_along: vec![k(0.0)], blowup_at: None };
    let mut y = State::<1>::zeros();
    let mut t = 0.0;
    let mut h: f64 = 1e-3;
    let mut next = stride;
    while t < t_end {
        let limit = next.min(t_end) - t;
        let step = h.min(limit);
        let dy = f(t, &y);
        let trial = dopri_step(&f, t, &y, &dy, step, &tol);
        if trial.error > 1.0 {
            h = step * step_factor(trial.error);
            continue;
        }
        if trace.blowup_at.is_none() && trial.y[0].abs() >= FRAC_PI_2 {
            let (mut lo, mut hi) = (0.0, step);
            while hi - lo > 1e-12 {
                let mid = 0.5 * (lo + hi);
                if dopri_step(&f, t, &y, &dy, mid, &tol).y[0].abs() >= FRAC_PI_2 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            trace.blowup_at = Some(t + hi);
        }
        y = trial.y;
        t += step;
        h = step * step_factor(trial.error);
        if step >= limit {
            if (next - t).abs() < 1e-12 || t >= t_end {
                trace.times.push(t);
                trace.u.push(y[0].tan());
                trace.k_along.push(k(t));
            }
            next += stride;
        }
    }
    trace
}

/// `κ(δ, ε)`: largest principal-curvature magnitude outside `Z_δ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaEstimate {
    pub delta: f64,
    pub epsilon: f64,
    pub kappa: f64,
    pub samples: usize,
    /// Points placed on `{|H| = δ}` by the boundary search.
    pub boundary_samples: usize,
    pub z_delta_samples: usize,
    /// Sampled points of `Z_δ` with `|γ₋| > |γ₊|` for the oriented normal.
    pub ordering_violations: usize,
}

/// Sign making the normal `∇G` point towards the obstacle nearest to an
/// unscaled point.
pub type Orientation<'a> = &'a (dyn Fn(&Vector3<f64>, &Vector3<f64>) -> f64 + Sync);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaSampling {
    pub samples: usize,
    pub boundary_samples: usize,
    pub seed: u64,
}

impl Default for KappaSampling {
    fn default() -> Self {
        Self { samples: 20_000, boundary_samples: 2_000, seed: 0 }
    }
}

/// Monte-Carlo maximum over `Σ ∖ Z_δ`, plus points on `∂Z_δ` reached by
/// walking from random samples along the horizontal gradient.
pub fn estimate_kappa<S: ImplicitSurface + SurfaceSampler + Clone + Sync>(
    surf: &FlattenedSurface<S>,
    delta: f64,
    epsilon: f64,
    sampling: &KappaSampling,
    orient: Option<Orientation>,
) -> KappaEstimate {
    let s = surf.with_epsilon(epsilon);
    let h_of = |x: &Vector3<f64>| {
        let g = s.local_at(x).surface.gradient(x);
        g[2] / g.norm()
    };
    let curv = |x: &Vector3<f64>| -> Option<(f64, f64)> {
        let sd = s.local_at(x).shape_data_scaled(&s.scale(x)).ok()?;
        Some((sd.gamma_plus, sd.gamma_minus))
    };

    struct Probe {
        outside: Option<f64>,
        inside_violation: Option<bool>,
    }
    let mc: Vec<Probe> = (0..sampling.samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(sampling.seed, i as u64);
            let Some(x) = sample_until(&s.surface, &mut rng) else {
                return Probe { outside: None, inside_violation: None };
            };
            let Some((gp, gm)) = curv(&x) else {
                return Probe { outside: None, inside_violation: None };
            };
            if h_of(&x).abs() > delta {
                Probe { outside: Some(gp.abs().max(gm.abs())), inside_violation: None }
            } else {
                let sign = orient.map(|o| o(&x, &s.local_at(&x).surface.gradient(&x))).unwrap_or(1.0);
                let (p, m) = if sign >= 0.0 { (gp, gm) } else { (-gm, -gp) };
                Probe { outside: None, inside_violation: Some(m.abs() > p.abs() * (1.0 + 1e-9)) }
            }
        })
        .collect();
    let boundary: Vec<Option<f64>> = (0..sampling.boundary_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(sampling.seed ^ 0x5eed_0000_0000, i as u64);
            let x = sample_until(&s.surface, &mut rng)?;
            let b = walk_to_zone_boundary(&s.local_at(&x).surface, &x, delta)?;
            let (gp, gm) = curv(&b)?;
            Some(gp.abs().max(gm.abs()))
        })
        .collect();

    let mut kappa: f64 = 0.0;
    let mut samples = 0;
    let mut z = 0;
    let mut violations = 0;
    for p in &mc {
        if let Some(k) = p.outside {
            kappa = kappa.max(k);
            samples += 1;
        }
        if let Some(v) = p.inside_violation {
            z += 1;
            violations += usize::from(v);
        }
    }
    let found: Vec<f64> = boundary.into_iter().flatten().collect();
    for k in &found {
        kappa = kappa.max(*k);
    }
    KappaEstimate { delta, epsilon, kappa, samples, boundary_samples: found.len(), z_delta_samples: z, ordering_violations: violations }
}

fn sample_until<S: SurfaceSampler>(s: &S, rng: &mut crate::rng::StreamRng) -> Option<Vector3<f64>> {
    (0..10_000).find_map(|_| s.sample_point(rng))
}

// Follows the surface in the direction of decreasing |H| within the vertical
// plane of the horizontal gradient until |H| = δ; returns the point just outside.
fn walk_to_zone_boundary<S: ImplicitSurface>(s: &S, x0: &Vector3<f64>, delta: f64) -> Option<Vector3<f64>> {
    let h_of = |x: &Vector3<f64>| {
        let g = s.gradient(x);
        (g[2] / g.norm()).abs()
    };
    if h_of(x0) <= delta {
        return None;
    }
    let g = s.gradient(x0);
    let dir = Vector2::new(g[0], g[1]);
    if dir.norm() < 1e-12 {
        return None;
    }
    let dir = dir.normalize();
    let step = 0.01;
    let probe = |x: &Vector3<f64>, sgn: f64, len: f64| -> Option<Vector3<f64>> {
        let y = project_unscaled(s, x + Vector3::new(dir[0], dir[1], 0.0) * (sgn * len)).ok()?;
        ((y - x).norm() < 5.0 * len + 1e-9).then_some(y)
    };
    let h0 = h_of(x0);
    let sgn = [1.0, -1.0].into_iter().find(|&sg| probe(x0, sg, step).is_some_and(|y| h_of(&y) < h0))?;
    let mut prev = *x0;
    for _ in 0..400 {
        let next = probe(&prev, sgn, step)?;
        if h_of(&next) <= delta {
            let (mut a, mut b) = (prev, next);
            for _ in 0..50 {
                let mid = project_unscaled(s, (a + b) / 2.0).ok()?;
                if h_of(&mid) > delta {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            return Some(a);
        }
        prev = next;
    }
    None
}

/// Outcome of one Riccati run in unscaled time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiccatiRun {
    pub u_end: f64,
    pub blowup_at: Option<f64>,
    pub integral_k: f64,
    pub integral_abs_k: f64,
    pub jacobi_log: f64,
}

/// Initial conditions and their Riccati runs for the certificate.
pub trait RiccatiSource: Sync {
    fn run(&self, index: usize, seed: u64, t_end: f64) -> Result<RiccatiRun>;
}

/// Geodesics of a flattened surface from sampler points with uniform angles.
pub struct SurfaceSource<'a, S> {
    pub surf: &'a FlattenedSurface<S>,
    pub options: Option<GeodesicOptions>,
}

impl<S: ImplicitSurface + SurfaceSampler + Clone + Sync> RiccatiSource for SurfaceSource<'_, S> {
    fn run(&self, index: usize, seed: u64, t_end: f64) -> Result<RiccatiRun> {
        let mut rng = stream_rng(seed, index as u64);
        let s0 = random_initial(self.surf, &mut rng).ok_or(Error::EmptySample)?;
        let out = integrate(self.surf, &s0, t_end, &RunOptions { options: self.options, ..Default::default() })?;
        Ok(RiccatiRun {
            u_end: out.u_end,
            blowup_at: out.blowup_at,
            integral_k: out.integral_k,
            integral_abs_k: out.integral_abs_k,
            jacobi_log: out.jacobi_log,
        })
    }
}

/// A model with the same curvature along every geodesic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantCurvature {
    pub k: f64,
}

impl RiccatiSource for ConstantCurvature {
    fn run(&self, _index: usize, _seed: u64, t_end: f64) -> Result<RiccatiRun> {
        let k = self.k;
        let trace = riccati_for_curvature(&move |_| k, t_end, t_end);
        Ok(RiccatiRun {
            u_end: trace.u_end(),
            blowup_at: trace.blowup_at,
            integral_k: k * t_end,
            integral_abs_k: k.abs() * t_end,
            jacobi_log: constant_jacobi_log(k, t_end),
        })
    }
}

// log ‖(J, J′)‖ for J″ = −kJ, J(0) = 1, J′(0) = 0.
fn constant_jacobi_log(k: f64, t: f64) -> f64 {
    if k < 0.0 {
        let a = (-k).sqrt();
        // cosh and a·sinh of at, in log form
        let x = a * t;
        let lc = x + (0.5 * (1.0 + (-2.0 * x).exp())).ln();
        let ls = x + (0.5 * (1.0 - (-2.0 * x).exp())).max(f64::MIN_POSITIVE).ln() + a.ln();
        let m = lc.max(ls);
        m + 0.5 * ((2.0 * (lc - m)).exp() + (2.0 * (ls - m)).exp()).ln()
    } else if k == 0.0 {
        0.0
    } else {
        let a = k.sqrt();
        ((a * t).cos().powi(2) + (a * (a * t).sin()).powi(2)).sqrt().ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertificateConfig {
    pub delta: f64,
    pub epsilon: f64,
    pub n_samples: usize,
    /// Certificate time on the rescaled surface.
    pub time: f64,
    /// Longest free flight of the table.
    pub horizon_t_max: f64,
    /// Homothety factor; chosen as `0.95·T/(3·t_max)` when absent.
    pub homothety: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub delta: f64,
    pub epsilon: f64,
    /// `κ` on the rescaled surface.
    pub kappa: f64,
    pub n_samples: usize,
    /// `min u(T)` on the rescaled surface.
    pub min_u: f64,
    pub pass: bool,
    pub blowup_count: usize,
    pub runtime: Option<f64>,
    pub homothety: f64,
    /// Integration time on the unscaled surface, `T/homothety`.
    pub unscaled_time: f64,
    pub horizon_t_max: f64,
    /// `κ²/2` on the rescaled surface.
    pub lower_bound: f64,
    pub margin: f64,
    /// Fraction of runs with `∫₀ᵀ|K| ≤ 3κ²`.
    pub low_curvature_fraction: f64,
    /// `sup ∫₀ᵀ K` over the runs.
    pub max_integral_k: f64,
    pub failed_runs: usize,
}

/// Riccati certificate on `n_samples` geodesics. `kappa` is the frozen
/// estimate for the unscaled surface.
pub fn anosov_certificate(source: &dyn RiccatiSource, kappa: f64, cfg: &CertificateConfig) -> Result<CertificateReport> {
    let limit = cfg.time / 3.0;
    let s = cfg.homothety.unwrap_or(0.95 * limit / cfg.horizon_t_max);
    if s.is_nan() || s <= 0.0 || s * cfg.horizon_t_max >= limit {
        return Err(Error::HorizonPreconditionFailed { scaled_horizon: s * cfg.horizon_t_max, limit });
    }
    let t_unscaled = cfg.time / s;
    let runs: Vec<Result<RiccatiRun>> = (0..cfg.n_samples).into_par_iter().map(|i| source.run(i, cfg.seed, t_unscaled)).collect();

    // rescaling by s: K → K/s², t → s·t, u → u/s, κ → κ/s
    let kappa_s = kappa / s;
    let lower_bound = kappa_s * kappa_s / 2.0;
    let mut min_u = f64::INFINITY;
    let mut blowups = 0;
    let mut failed = 0;
    let mut low = 0;
    let mut max_int_k = f64::NEG_INFINITY;
    let mut ok = 0;
    for r in &runs {
        match r {
            Ok(r) => {
                ok += 1;
                if r.blowup_at.is_some() {
                    blowups += 1;
                }
                min_u = min_u.min(r.u_end / s);
                let abs_k = r.integral_abs_k / s;
                if abs_k <= 3.0 * kappa_s * kappa_s {
                    low += 1;
                }
                max_int_k = max_int_k.max(r.integral_k / s);
            }
            Err(_) => failed += 1,
        }
    }
    let pass = ok > 0 && failed == 0 && blowups == 0 && min_u >= lower_bound;
    Ok(CertificateReport {
        delta: cfg.delta,
        epsilon: cfg.epsilon,
        kappa: kappa_s,
        n_samples: cfg.n_samples,
        min_u,
        pass,
        blowup_count: blowups,
        runtime: None,
        homothety: s,
        unscaled_time: t_unscaled,
        horizon_t_max: cfg.horizon_t_max,
        lower_bound,
        margin: min_u - lower_bound,
        low_curvature_fraction: if ok > 0 { low as f64 / ok as f64 } else { 0.0 },
        max_integral_k: max_int_k,
        failed_runs: failed,
    })
}

/// Growth rate of `‖(J, J′)‖` for the Jacobi field with `J(0) = 1, J′(0) = 0`.
pub fn lyapunov_exponent<S: ImplicitSurface + Clone>(surf: &FlattenedSurface<S>, s0: &GeodesicState, t_end: f64) -> Result<f64> {
    if t_end < 10.0 {
        return Err(Error::InvalidConfig(format!("Lyapunov time {t_end} is below 10")));
    }
    let out = integrate(surf, s0, t_end, &RunOptions::default())?;
    Ok(out.jacobi_log / t_end)
}

/// Lyapunov exponents of `count` random geodesics.
pub fn lyapunov_probes<S: ImplicitSurface + SurfaceSampler + Clone + Sync>(
    surf: &FlattenedSurface<S>,
    count: usize,
    t_end: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let s0 = random_initial(surf, &mut rng).ok_or(Error::EmptySample)?;
            lyapunov_exponent(surf, &s0, t_end)
        })
        .collect()
}

/// Uniform angle helper shared with the samplers.
pub fn random_angle(rng: &mut crate::rng::StreamRng) -> f64 {
    rng.random_range(0.0..TAU)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::{Plane, Sphere};

    #[test]
    fn constant_curvature_closed_forms() {
        let t = riccati_for_curvature(&|_| -1.0, 1.0, 0.1);
        assert!((t.u_end() - 1f64.tanh()).abs() < 1e-9);
        assert!(t.blowup_at.is_none());
        let t = riccati_for_curvature(&|_| 0.0, 1.0, 0.1);
        assert!(t.u.iter().all(|u| *u == 0.0));
        let t = riccati_for_curvature(&|_| 1.0, 2.0, 0.1);
        assert!((t.blowup_at.unwrap() - FRAC_PI_2).abs() < 1e-9);
        for (time, u) in t.times.iter().zip(&t.u) {
            if *time < 1.5 {
                assert!((u + time.tan()).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn sphere_trace_matches_jacobi_ratio() {
        let s = FlattenedSurface::new(Sphere { radius: 1.0 }, 1.0, false);
        let s0 = GeodesicState { q: Vector3::x(), p: Vector3::y(), t: 0.0 };
        let out = integrate(&s, &s0, 1.4, &RunOptions { record_steps: true, ..Default::default() }).unwrap();
        for r in &out.steps {
            assert!((r.u - r.jacobi_u).abs() < 1e-5);
            assert!((r.u + r.t.tan()).abs() < 1e-6);
        }
    }

    #[test]
    fn plane_kappa_is_zero() {
        let s = FlattenedSurface::new(Plane { normal: Vector3::new(0.0, 0.6, 0.8) }, 1.0, false);
        let k = estimate_kappa(&s, 0.1, 1.0, &KappaSampling { samples: 200, boundary_samples: 20, seed: 1 }, None);
        assert_eq!(k.kappa, 0.0);
        assert!(k.samples > 0);
    }

    #[test]
    fn certificate_on_constant_models() {
        let cfg = CertificateConfig { delta: 0.1, epsilon: 1.0, n_samples: 4, time: 1.0, horizon_t_max: 1.0, homothety: Some(0.2), seed: 0 };
        let rep = anosov_certificate(&ConstantCurvature { k: -1.0 }, 0.5, &cfg).unwrap();
        assert!(rep.pass);
        // u(5) on the unscaled model, divided by the homothety
        assert!((rep.min_u - 5f64.tanh() / 0.2).abs() < 1e-8);
        let rep = anosov_certificate(&ConstantCurvature { k: 1.0 }, 0.5, &cfg).unwrap();
        assert!(!rep.pass && rep.blowup_count == 4);
        let bad = CertificateConfig { homothety: Some(0.5), ..cfg };
        assert!(matches!(anosov_certificate(&ConstantCurvature { k: -1.0 }, 0.5, &bad), Err(Error::HorizonPreconditionFailed { .. })));
    }

    #[test]
    fn constant_lyapunov_log() {
        assert!((constant_jacobi_log(-1.0, 3.0) - (3f64.cosh().powi(2) + 3f64.sinh().powi(2)).sqrt().ln()).abs() < 1e-12);
        assert!((constant_jacobi_log(-1.0, 400.0) / 400.0 - 1.0).abs() < 1e-3);
    }
}
