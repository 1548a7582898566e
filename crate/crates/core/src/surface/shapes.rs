//! Reference surfaces with closed-form geometry, used as test oracles.

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::Rng;

use super::{Branched, ImplicitSurface, SurfaceSampler};
use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// `x² + y² + z² = radius²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sphere {
    pub radius: f64,
}

impl ImplicitSurface for Sphere {
    fn value(&self, x: &Vector3<f64>) -> f64 {
        x.norm_squared() - self.radius * self.radius
    }
    fn gradient(&self, x: &Vector3<f64>) -> Vector3<f64> {
        2.0 * x
    }
    fn hessian(&self, _x: &Vector3<f64>) -> Matrix3<f64> {
        2.0 * Matrix3::identity()
    }
}

impl SurfaceSampler for Sphere {
    fn sample_point(&self, rng: &mut StreamRng) -> Option<Vector3<f64>> {
        let z: f64 = rng.random_range(-1.0..1.0);
        let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let r = (1.0 - z * z).sqrt();
        Some(Vector3::new(r * a.cos(), r * a.sin(), z) * self.radius)
    }
}

/// Upper (`true`) or lower hemisphere as a graph over the disc.
impl Branched for Sphere {
    type Branch = bool;
    fn lift_point(&self, base: &Vector2<f64>, upper: bool) -> Result<Vector3<f64>> {
        let rad = self.radius * self.radius - base.norm_squared();
        if rad < 0.0 {
            return Err(Error::NoSuchBranch { theta: base[0], phi: base[1] });
        }
        let z = rad.sqrt();
        Ok(Vector3::new(base[0], base[1], if upper { z } else { -z }))
    }
}

/// The unit tube `y² + z² = 1` around the x-axis.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Tube;

impl ImplicitSurface for Tube {
    fn value(&self, x: &Vector3<f64>) -> f64 {
        x[1] * x[1] + x[2] * x[2] - 1.0
    }
    fn gradient(&self, x: &Vector3<f64>) -> Vector3<f64> {
        Vector3::new(0.0, 2.0 * x[1], 2.0 * x[2])
    }
    fn hessian(&self, _x: &Vector3<f64>) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::new(0.0, 2.0, 2.0))
    }
}

impl SurfaceSampler for Tube {
    fn sample_point(&self, rng: &mut StreamRng) -> Option<Vector3<f64>> {
        let x: f64 = rng.random_range(-1.0..1.0);
        let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        Some(Vector3::new(x, a.cos(), a.sin()))
    }
}

impl Branched for Tube {
    type Branch = bool;
    fn lift_point(&self, base: &Vector2<f64>, upper: bool) -> Result<Vector3<f64>> {
        let rad = 1.0 - base[1] * base[1];
        if rad < 0.0 {
            return Err(Error::NoSuchBranch { theta: base[0], phi: base[1] });
        }
        let z = rad.sqrt();
        Ok(Vector3::new(base[0], base[1], if upper { z } else { -z }))
    }
}

/// The plane `⟨normal, x⟩ = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub normal: Vector3<f64>,
}

impl ImplicitSurface for Plane {
    fn value(&self, x: &Vector3<f64>) -> f64 {
        self.normal.dot(x)
    }
    fn gradient(&self, _x: &Vector3<f64>) -> Vector3<f64> {
        self.normal
    }
    fn hessian(&self, _x: &Vector3<f64>) -> Matrix3<f64> {
        Matrix3::zeros()
    }
}

impl SurfaceSampler for Plane {
    fn sample_point(&self, rng: &mut StreamRng) -> Option<Vector3<f64>> {
        let x = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = self.normal.normalize();
        Some(x - n * n.dot(&x))
    }
}
