//! Normal-curvature probes near a wall point as `ε → 0`.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::{FlattenedSurface, ImplicitSurface};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub epsilon: f64,
    /// Infimum of `γ_N(q, p)` over sampled `q ∈ V_ν` and `|p_x| ≤ α`.
    pub inf_gamma_n: f64,
    /// Supremum of the smaller principal curvature over the same points.
    pub sup_gamma_minus: f64,
    /// `inf_gamma_n · ε²`.
    pub scaled_inf: f64,
    pub points: usize,
}

/// Largest `|H|` with `|N^ε_z| < 1 − ν`.
pub fn v_nu_height_bound(epsilon: f64, nu: f64) -> f64 {
    let m = 1.0 - nu;
    m * epsilon / (1.0 - m * m + m * m * epsilon * epsilon).sqrt()
}

/// Scan settings shared by every `ε`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanGrid {
    pub along_wall: usize,
    pub heights: usize,
    pub directions: usize,
    /// Half-range of vertical offsets searched for a target `H`.
    pub vertical_range: f64,
}

impl Default for ScanGrid {
    fn default() -> Self {
        Self { along_wall: 21, heights: 41, directions: 9, vertical_range: 0.5 }
    }
}

/// For each `ε`, samples `V_ν ∩ B(q0^ε, radius)` near the wall point `q0`
/// (unscaled, `H(q0) = 0`) and reports the extreme normal curvatures.
/// `outward` is the horizontal direction leaving `D` at `π(q0)`; the normal
/// is oriented to agree with it.
#[allow(clippy::too_many_arguments)]
pub fn curvature_blowup_scan<S: ImplicitSurface + Clone>(
    surf: &FlattenedSurface<S>,
    q0: &Vector3<f64>,
    outward: &Vector2<f64>,
    alpha: f64,
    nu: f64,
    radius: f64,
    eps_list: &[f64],
    grid: &ScanGrid,
) -> Result<Vec<ScanRow>> {
    let n0 = surf.unit_normal(q0)?;
    let sigma = if n0[0] * outward[0] + n0[1] * outward[1] >= 0.0 { 1.0 } else { -1.0 };
    let along = Vector3::new(n0[0], n0[1], 0.0).cross(&Vector3::z());
    if along.norm() < 1e-12 {
        return Err(Error::InvalidConfig("scan origin is not a wall point".into()));
    }
    let along = along.normalize();

    // vertical profile of H along the wall, shared by all ε
    let nb = 401;
    let profiles: Vec<Profile> = (0..grid.along_wall)
        .map(|i| {
            let a = radius * 0.9 * (2.0 * i as f64 / (grid.along_wall.max(2) - 1) as f64 - 1.0);
            let base = q0 + along * a;
            let samples = (0..nb)
                .filter_map(|j| {
                    let b = grid.vertical_range * (2.0 * j as f64 / (nb - 1) as f64 - 1.0);
                    let x = surf.project(base + Vector3::z() * b).ok()?;
                    Some((b, surf.unit_normal(&x).ok()?[2]))
                })
                .collect();
            Profile { base, samples }
        })
        .collect();

    let mut rows = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let s = surf.with_epsilon(eps);
        let hmax = v_nu_height_bound(eps, nu);
        let mut inf_gn = f64::INFINITY;
        let mut sup_gm = f64::NEG_INFINITY;
        let mut count = 0;
        for prof in &profiles {
            for k in 0..grid.heights {
                let target = hmax * (1.0 - 1e-9) * (2.0 * k as f64 / (grid.heights.max(2) - 1) as f64 - 1.0);
                let Some(x) = solve_height(&s, prof, target) else { continue };
                let xs = s.scale(&x);
                if (xs - s.scale(q0)).norm() > radius {
                    continue;
                }
                let n = sigma * s.normal_scaled(&xs)?;
                if n[2].abs() >= 1.0 - nu {
                    continue;
                }
                count += 1;
                let w = n.cross(&Vector3::z()).normalize();
                let t2 = n.cross(&w);
                let b0 = alpha.clamp(0.0, 1.0).acos();
                for d in 0..grid.directions {
                    let beta = if grid.directions > 1 {
                        b0 + (std::f64::consts::PI - 2.0 * b0) * d as f64 / (grid.directions - 1) as f64
                    } else {
                        std::f64::consts::FRAC_PI_2
                    };
                    let p = w * beta.cos() + t2 * beta.sin();
                    inf_gn = inf_gn.min(sigma * s.gamma_n(&xs, &p)?);
                }
                let sd = s.shape_data_scaled(&xs)?;
                let gm = if sigma > 0.0 { sd.gamma_minus } else { -sd.gamma_plus };
                sup_gm = sup_gm.max(gm);
            }
        }
        if count == 0 {
            return Err(Error::EmptySample);
        }
        rows.push(ScanRow { epsilon: eps, inf_gamma_n: inf_gn, sup_gamma_minus: sup_gm, scaled_inf: inf_gn * eps * eps, points: count });
    }
    Ok(rows)
}

struct Profile {
    base: Vector3<f64>,
    /// `(vertical offset, H)` after projecting `base + offset·e_z` onto `Σ`.
    samples: Vec<(f64, f64)>,
}

// Point of a vertical profile where H equals `target`, refined by bisection in the offset.
fn solve_height<S: ImplicitSurface + Clone>(s: &FlattenedSurface<S>, prof: &Profile, target: f64) -> Option<Vector3<f64>> {
    // the bracket closest to zero offset keeps us on the fold through q0
    let mut best: Option<(f64, f64, f64)> = None;
    for w in prof.samples.windows(2) {
        let (b0, h0) = w[0];
        let (b1, h1) = w[1];
        if (h0 - target) * (h1 - target) <= 0.0 {
            let dist = b0.abs().min(b1.abs());
            if best.is_none_or(|(_, _, d)| dist < d) {
                best = Some((b0, b1, dist));
            }
        }
    }
    let (mut lo, mut hi, _) = best?;
    let eval = |b: f64| -> Option<(Vector3<f64>, f64)> {
        let x = s.project(prof.base + Vector3::z() * b).ok()?;
        Some((x, s.unit_normal(&x).ok()?[2]))
    };
    let (_, hlo) = eval(lo)?;
    let mut x = None;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let (xm, hm) = eval(mid)?;
        x = Some(xm);
        if (hm - target).abs() < 1e-15 {
            break;
        }
        if (hm - target) * (hlo - target) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::Tube;

    #[test]
    fn tube_scan_respects_ellipse_bound_and_scaling() {
        let s = FlattenedSurface::new(Tube, 1.0, false);
        let q0 = Vector3::new(0.0, 1.0, 0.0);
        let nu = 0.5;
        let eps = [0.1, 0.05, 0.025];
        let rows = curvature_blowup_scan(&s, &q0, &Vector2::new(0.0, 1.0), 0.0, nu, 0.5, &eps, &ScanGrid::default()).unwrap();
        let c = (nu * (2.0 - nu)).powf(1.5);
        for r in &rows {
            let bound = c / (r.epsilon * r.epsilon);
            assert!(r.inf_gamma_n >= bound * 0.99, "{} < {}", r.inf_gamma_n, bound);
            assert!(r.inf_gamma_n <= bound * 1.01);
            // cylinder: the second principal curvature vanishes
            assert!(r.sup_gamma_minus.abs() < 1e-9);
        }
        for w in rows.windows(2) {
            let ratio = w[1].inf_gamma_n / w[0].inf_gamma_n;
            assert!((3.5..=4.5).contains(&ratio), "{ratio}");
        }
    }

    #[test]
    fn height_bound_matches_normal_formula() {
        let s = FlattenedSurface::new(Tube, 0.03, false);
        let h = v_nu_height_bound(0.03, 0.2);
        assert!((s.nz_from_h(h) - 0.8).abs() < 1e-12);
    }
}
