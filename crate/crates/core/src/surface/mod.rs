//! Implicit surfaces `Σ = {G = 0}` and their vertical flattenings
//! `Σ_ε = {(x, y, εz) : (x, y, z) ∈ Σ}`.
//!
//! All geometry of `Σ_ε` is computed from `G_ε(X, Y, Z) = G(X, Y, Z/ε)`:
//! with `S = diag(1, 1, 1/ε)`, `∇G_ε = S∇G` and `Hess G_ε = S·Hess G·S`.

mod darboux;
mod mesh;
mod scan;
mod shapes;

pub use darboux::{darboux_along, DarbouxSample};
pub use mesh::{marching_tetrahedra, Mesh};
pub use scan::{curvature_blowup_scan, v_nu_height_bound, ScanGrid, ScanRow};
pub use shapes::{Plane, Sphere, Tube};

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// Minimum gradient norm accepted when normalising.
pub const MIN_GRADIENT: f64 = 1e-8;

/// A C² function on ℝ³ (or T² × ℝ) with analytic derivatives.
pub trait ImplicitSurface: Send + Sync {
    fn value(&self, x: &Vector3<f64>) -> f64;
    fn gradient(&self, x: &Vector3<f64>) -> Vector3<f64>;
    fn hessian(&self, x: &Vector3<f64>) -> Matrix3<f64>;

    /// An equation for the sheet through `x` that stays regular along it,
    /// for surfaces whose global equation is singular where sheets cross.
    fn local_chart(&self, _x: &Vector3<f64>) -> Option<Self>
    where
        Self: Sized,
    {
        None
    }
}

/// Random points on `Σ` (unscaled coordinates) for Monte-Carlo probes.
pub trait SurfaceSampler {
    fn sample_point(&self, rng: &mut StreamRng) -> Option<Vector3<f64>>;
}

/// Surfaces that are graphs over horizontal coordinates, one per branch.
pub trait Branched {
    type Branch: Copy;
    fn lift_point(&self, base: &Vector2<f64>, branch: Self::Branch) -> Result<Vector3<f64>>;
}

/// `Σ` together with a flattening parameter.
#[derive(Debug, Clone)]
pub struct FlattenedSurface<S> {
    pub surface: S,
    pub epsilon: f64,
    /// Horizontal coordinates live on the torus rather than the plane.
    pub periodic: bool,
}

/// A point of `Σ` and its image in `Σ_ε`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfacePoint {
    pub position: Vector3<f64>,
    pub scaled_position: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeData {
    pub normal: Vector3<f64>,
    #[serde(rename = "H")]
    pub h: f64,
    pub gamma_plus: f64,
    pub gamma_minus: f64,
    #[serde(rename = "gaussK")]
    pub gauss_k: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZoneFlags {
    pub in_z_delta: bool,
    pub in_v_nu: bool,
}

/// Orthonormal basis of the plane orthogonal to `n`.
pub fn tangent_basis(n: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let axis = if n[0].abs() <= n[1].abs() && n[0].abs() <= n[2].abs() {
        Vector3::x()
    } else if n[1].abs() <= n[2].abs() {
        Vector3::y()
    } else {
        Vector3::z()
    };
    let t1 = (axis - n * n.dot(&axis)).normalize();
    let t2 = n.cross(&t1);
    (t1, t2)
}

/// Eigenvalues `(max, min)` of a symmetric 2×2 matrix.
pub fn sym2_eigenvalues(a: &Matrix2<f64>) -> (f64, f64) {
    let m = 0.5 * (a[(0, 0)] + a[(1, 1)]);
    let d = 0.5 * (a[(0, 0)] - a[(1, 1)]);
    let r = d.hypot(0.5 * (a[(0, 1)] + a[(1, 0)]));
    (m + r, m - r)
}

impl<S: ImplicitSurface> FlattenedSurface<S> {
    pub fn new(surface: S, epsilon: f64, periodic: bool) -> Self {
        assert!(epsilon > 0.0 && epsilon <= 1.0, "epsilon must lie in (0, 1]");
        Self { surface, epsilon, periodic }
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Self
    where
        S: Clone,
    {
        Self::new(self.surface.clone(), epsilon, self.periodic)
    }

    /// The same surface described near the unscaled point `x` by its local
    /// equation, when the global one degenerates there.
    pub fn local_at(&self, x: &Vector3<f64>) -> Self
    where
        S: Clone,
    {
        let surface = self.surface.local_chart(x).unwrap_or_else(|| self.surface.clone());
        Self { surface, epsilon: self.epsilon, periodic: self.periodic }
    }

    pub fn scale(&self, x: &Vector3<f64>) -> Vector3<f64> {
        Vector3::new(x[0], x[1], self.epsilon * x[2])
    }

    pub fn unscale(&self, x: &Vector3<f64>) -> Vector3<f64> {
        Vector3::new(x[0], x[1], x[2] / self.epsilon)
    }

    /// Wraps a point of `Σ` after checking `|G| ≤ 1e-10`.
    pub fn point(&self, position: Vector3<f64>) -> Result<SurfacePoint> {
        let g = self.surface.value(&position);
        let n = self.surface.gradient(&position).norm().max(MIN_GRADIENT);
        if (g / n).abs() > 1e-10 && g.abs() > 1e-10 {
            return Err(Error::InvalidConfig(format!("point is off the surface (G = {g:.3e})")));
        }
        Ok(SurfacePoint { position, scaled_position: self.scale(&position) })
    }

    pub fn point_from_scaled(&self, scaled: Vector3<f64>) -> Result<SurfacePoint> {
        self.point(self.unscale(&scaled))
    }

    /// Newton projection of an unscaled point onto `Σ` along `∇G`.
    pub fn project(&self, x: Vector3<f64>) -> Result<Vector3<f64>> {
        project_unscaled(&self.surface, x)
    }

    pub fn value_scaled(&self, x: &Vector3<f64>) -> f64 {
        self.surface.value(&self.unscale(x))
    }

    pub fn gradient_scaled(&self, x: &Vector3<f64>) -> Vector3<f64> {
        let mut g = self.surface.gradient(&self.unscale(x));
        g[2] /= self.epsilon;
        g
    }

    pub fn hessian_scaled(&self, x: &Vector3<f64>) -> Matrix3<f64> {
        let s = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 1.0 / self.epsilon));
        s * self.surface.hessian(&self.unscale(x)) * s
    }

    /// `N^ε` at a scaled point: the normalised gradient of `G_ε`.
    pub fn normal_scaled(&self, x: &Vector3<f64>) -> Result<Vector3<f64>> {
        let g = self.surface.gradient(&self.unscale(x));
        let n = g.norm();
        if n < MIN_GRADIENT {
            return Err(Error::DegenerateNormal { norm: n });
        }
        let mut ge = g;
        ge[2] /= self.epsilon;
        Ok(ge / ge.norm())
    }

    /// `N^ε(f_ε(q))`, evaluated from `∇G_ε` and checked against the rescaled
    /// unflattened normal `(N¹_x, N¹_y, N¹_z/ε)/‖·‖`.
    pub fn normal_epsilon(&self, q: &SurfacePoint) -> Result<Vector3<f64>> {
        let (a, b) = self.normal_epsilon_both(q)?;
        debug_assert!((a - b).norm() <= 1e-9, "normal routes disagree: {a} vs {b}");
        Ok(a)
    }

    /// Both evaluations of `N^ε`, for consistency checks.
    pub fn normal_epsilon_both(&self, q: &SurfacePoint) -> Result<(Vector3<f64>, Vector3<f64>)> {
        let via_scaled = self.normal_scaled(&q.scaled_position)?;
        let n1 = self.unit_normal(&q.position)?;
        let r = Vector3::new(n1[0], n1[1], n1[2] / self.epsilon);
        Ok((via_scaled, r / r.norm()))
    }

    /// `N¹ = ∇G/‖∇G‖` at an unscaled point.
    pub fn unit_normal(&self, x: &Vector3<f64>) -> Result<Vector3<f64>> {
        let g = self.surface.gradient(x);
        let n = g.norm();
        if n < MIN_GRADIENT {
            return Err(Error::DegenerateNormal { norm: n });
        }
        Ok(g / n)
    }

    /// `H = N¹_z`, independent of `ε`.
    pub fn h_value(&self, q: &SurfacePoint) -> Result<f64> {
        Ok(self.unit_normal(&q.position)?[2])
    }

    /// Shape operator `p ↦ DN·p` at a scaled point, as an ambient 3×3 map
    /// that annihilates the normal.
    pub fn shape_operator_scaled(&self, x: &Vector3<f64>) -> Result<Matrix3<f64>> {
        let g = self.gradient_scaled(x);
        let n = g.norm();
        if n < MIN_GRADIENT {
            return Err(Error::DegenerateNormal { norm: n });
        }
        let nu = g / n;
        let p = Matrix3::identity() - nu * nu.transpose();
        Ok(p * self.hessian_scaled(x) * p / n)
    }

    /// Normal curvature `⟨DN p, p⟩` for a unit tangent `p` at a scaled point.
    pub fn gamma_n(&self, x: &Vector3<f64>, p: &Vector3<f64>) -> Result<f64> {
        let g = self.gradient_scaled(x);
        let n = g.norm();
        if n < MIN_GRADIENT {
            return Err(Error::DegenerateNormal { norm: n });
        }
        Ok((self.hessian_scaled(x) * p).dot(p) / n)
    }

    /// Principal and Gaussian curvatures at a scaled point.
    pub fn shape_data_scaled(&self, x: &Vector3<f64>) -> Result<ShapeData> {
        let unscaled = self.unscale(x);
        let g1 = self.surface.gradient(&unscaled);
        let n1 = g1.norm();
        if n1 < MIN_GRADIENT {
            return Err(Error::DegenerateNormal { norm: n1 });
        }
        let g = self.gradient_scaled(x);
        let gn = g.norm();
        let normal = g / gn;
        let hess = self.hessian_scaled(x);
        let (t1, t2) = tangent_basis(&normal);
        let a11 = (hess * t1).dot(&t1) / gn;
        let a12 = (hess * t2).dot(&t1) / gn;
        let a22 = (hess * t2).dot(&t2) / gn;
        let m = Matrix2::new(a11, a12, a12, a22);
        let (gamma_plus, gamma_minus) = sym2_eigenvalues(&m);
        Ok(ShapeData { normal, h: g1[2] / n1, gamma_plus, gamma_minus, gauss_k: a11 * a22 - a12 * a12 })
    }

    pub fn shape_operator(&self, q: &SurfacePoint) -> Result<(ShapeData, Matrix3<f64>)> {
        Ok((self.shape_data_scaled(&q.scaled_position)?, self.shape_operator_scaled(&q.scaled_position)?))
    }

    /// Gaussian curvature of `Σ_ε` at a scaled point.
    pub fn gauss_k_scaled(&self, x: &Vector3<f64>) -> Result<f64> {
        Ok(self.shape_data_scaled(x)?.gauss_k)
    }

    /// `N^ε_z` from `H` alone.
    pub fn nz_from_h(&self, h: f64) -> f64 {
        let e = self.epsilon;
        (h / e) / ((1.0 - h * h) + h * h / (e * e)).sqrt()
    }

    pub fn zone_membership(&self, q: &SurfacePoint, delta: f64, nu: f64) -> Result<ZoneFlags> {
        let h = self.h_value(q)?;
        let nz = self.normal_epsilon(q)?[2];
        Ok(ZoneFlags { in_z_delta: h.abs() <= delta, in_v_nu: nz.abs() < 1.0 - nu })
    }

    /// Unit tangent of `Σ_ε` at the scaled point over horizontal velocity
    /// `(px, py)`, when `Σ` is a graph there.
    pub fn lift_horizontal(&self, x: &Vector3<f64>, p: &Vector2<f64>) -> Result<Vector3<f64>> {
        let g = self.gradient_scaled(x);
        if g[2].abs() < MIN_GRADIENT {
            return Err(Error::DegenerateNormal { norm: g[2].abs() });
        }
        let pz = -(g[0] * p[0] + g[1] * p[1]) / g[2];
        Ok(Vector3::new(p[0], p[1], pz).normalize())
    }
}

pub fn project_unscaled<S: ImplicitSurface + ?Sized>(s: &S, mut x: Vector3<f64>) -> Result<Vector3<f64>> {
    for _ in 0..50 {
        let v = s.value(&x);
        let g = s.gradient(&x);
        let n2 = g.norm_squared();
        if n2 < MIN_GRADIENT * MIN_GRADIENT {
            return Err(Error::DegenerateNormal { norm: n2.sqrt() });
        }
        let step = g * (v / n2);
        x -= step;
        if step.norm() <= 1e-12 * (1.0 + x.norm()) {
            return Ok(x);
        }
    }
    Ok(x)
}
