//! Darboux frame `(T, G, ν)` along sampled curves on `Σ_ε`.
//!
//! The frame normal is `ν = −N^ε`, so that `⟨T′, ν⟩ = ⟨DN T, T⟩` and the
//! normal curvature agrees with the shape-operator convention.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{FlattenedSurface, ImplicitSurface};
use crate::error::Result;

/// Below this curvature the principal normal is undefined.
pub const MIN_CURVATURE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DarbouxSample {
    pub index: usize,
    pub gamma_n: f64,
    pub gamma_g: f64,
    pub tau_g: f64,
    /// Space curvature `‖T′‖`.
    pub curvature: f64,
    /// `k·√(1 − ⟨ν, T∧n⟩²)`, absent when the principal normal is undefined.
    pub gamma_n_from_binormal: Option<f64>,
    /// `‖T′ − γ_G·G − γ_N·ν‖`.
    pub frame_residual: f64,
    pub zero_curvature: bool,
}

/// Frame coefficients at every interior sample of a unit-speed curve given
/// by scaled points with uniform arclength spacing `h`.
pub fn darboux_along<S: ImplicitSurface>(surf: &FlattenedSurface<S>, points: &[Vector3<f64>], h: f64) -> Result<Vec<DarbouxSample>> {
    if points.len() < 3 {
        return Ok(Vec::new());
    }
    let normals: Vec<Vector3<f64>> = points.iter().map(|x| surf.normal_scaled(x).map(|n| -n)).collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(points.len() - 2);
    for i in 1..points.len() - 1 {
        let (a, b, c) = (points[i - 1], points[i], points[i + 1]);
        let t = ((c - a) / (2.0 * h)).normalize();
        let dt = (c - 2.0 * b + a) / (h * h);
        let nu = normals[i];
        let g = nu.cross(&t);
        let gamma_n = dt.dot(&nu);
        let gamma_g = dt.dot(&g);
        let dnu = (normals[i + 1] - normals[i - 1]) / (2.0 * h);
        let tau_g = -dnu.dot(&g);
        let k = dt.norm();
        let zero_curvature = k < MIN_CURVATURE;
        let gamma_n_from_binormal = (!zero_curvature).then(|| {
            let n = dt / k;
            let bin = t.cross(&n);
            k * (1.0 - nu.dot(&bin).powi(2)).max(0.0).sqrt()
        });
        let gamma_n = if zero_curvature { surf.gamma_n(&b, &t)? } else { gamma_n };
        let frame_residual = (dt - g * gamma_g - nu * gamma_n).norm();
        out.push(DarbouxSample { index: i, gamma_n, gamma_g, tau_g, curvature: k, gamma_n_from_binormal, frame_residual, zero_curvature });
    }
    Ok(out)
}
