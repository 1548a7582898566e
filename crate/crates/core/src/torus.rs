//! Flat-torus arithmetic, lifted segments and implicit planar curves.

use std::f64::consts::TAU;
use std::fmt;
use std::sync::Arc;

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reduce an angle to `[0, 2π)`.
pub fn wrap_angle(x: f64) -> f64 {
    let r = x.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Signed representative of `x` in `[-π, π)`.
pub fn wrap_signed(x: f64) -> f64 {
    let r = wrap_angle(x + std::f64::consts::PI) - std::f64::consts::PI;
    if r < -std::f64::consts::PI {
        r + TAU
    } else {
        r
    }
}

/// Point of the flat torus, stored with both angles reduced mod 2π.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TorusPoint {
    pub theta: f64,
    pub phi: f64,
}

impl TorusPoint {
    pub fn new(theta: f64, phi: f64) -> Self {
        Self { theta: wrap_angle(theta), phi: wrap_angle(phi) }
    }

    /// Representative in the fundamental square `[0, 2π)²`.
    pub fn lift(&self) -> Vector2<f64> {
        Vector2::new(self.theta, self.phi)
    }

    pub fn from_lift(x: &Vector2<f64>) -> Self {
        Self::new(x[0], x[1])
    }
}

/// Flat distance, minimised over deck translates.
pub fn torus_distance(a: &TorusPoint, b: &TorusPoint) -> f64 {
    let d = |x: f64| {
        let r = wrap_angle(x);
        r.min(TAU - r)
    };
    d(a.theta - b.theta).hypot(d(a.phi - b.phi))
}

/// Straight segment in the universal cover.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiftedSegment {
    pub start: Vector2<f64>,
    pub direction: Vector2<f64>,
    pub length: f64,
}

impl LiftedSegment {
    /// Builds a segment; `direction` is normalised.
    pub fn new(start: Vector2<f64>, direction: Vector2<f64>, length: f64) -> Self {
        let n = direction.norm();
        assert!(n > 0.0 && length >= 0.0, "degenerate segment");
        Self { start, direction: direction / n, length }
    }

    pub fn at(&self, t: f64) -> Vector2<f64> {
        self.start + self.direction * t
    }

    pub fn end(&self) -> Vector2<f64> {
        self.at(self.length)
    }

    pub fn reversed(&self) -> Self {
        Self { start: self.end(), direction: -self.direction, length: self.length }
    }
}

/// A C² scalar field on the plane (periodic when used on the torus).
pub trait CurveField: Send + Sync + fmt::Debug {
    fn value(&self, x: &Vector2<f64>) -> f64;
    fn gradient(&self, x: &Vector2<f64>) -> Vector2<f64>;
    fn hessian(&self, x: &Vector2<f64>) -> Matrix2<f64>;
    /// Global Lipschitz constant of `value`, if known.
    fn lipschitz(&self) -> Option<f64> {
        None
    }
}

/// Shared handle to an implicit curve description.
#[derive(Clone, Debug)]
pub struct ImplicitCurve(Arc<dyn CurveField>);

impl ImplicitCurve {
    pub fn new(field: impl CurveField + 'static) -> Self {
        Self(Arc::new(field))
    }
}

impl std::ops::Deref for ImplicitCurve {
    type Target = dyn CurveField;
    fn deref(&self) -> &Self::Target {
        &*self.0
    }
}

/// `a·cosθ + b·cosφ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineSum {
    pub a: f64,
    pub b: f64,
}

impl CurveField for CosineSum {
    fn value(&self, x: &Vector2<f64>) -> f64 {
        self.a * x[0].cos() + self.b * x[1].cos()
    }
    fn gradient(&self, x: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new(-self.a * x[0].sin(), -self.b * x[1].sin())
    }
    fn hessian(&self, x: &Vector2<f64>) -> Matrix2<f64> {
        Matrix2::new(-self.a * x[0].cos(), 0.0, 0.0, -self.b * x[1].cos())
    }
    fn lipschitz(&self) -> Option<f64> {
        Some(self.a.hypot(self.b))
    }
}

/// Squared flat-torus distance to a centre. Smooth away from the cut locus,
/// so only suitable for discs of radius well below π.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TorusDiscField {
    pub center: Vector2<f64>,
}

impl TorusDiscField {
    fn offset(&self, x: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new(wrap_signed(x[0] - self.center[0]), wrap_signed(x[1] - self.center[1]))
    }
}

impl CurveField for TorusDiscField {
    fn value(&self, x: &Vector2<f64>) -> f64 {
        self.offset(x).norm_squared()
    }
    fn gradient(&self, x: &Vector2<f64>) -> Vector2<f64> {
        2.0 * self.offset(x)
    }
    fn hessian(&self, _x: &Vector2<f64>) -> Matrix2<f64> {
        Matrix2::identity() * 2.0
    }
}

/// First crossing of a level set along a segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crossing {
    pub t: f64,
    pub point: Vector2<f64>,
}

const LEVEL_TOL: f64 = 1e-12;
const ENTRY_TOL: f64 = 1e-10;
const TANGENCY_TOL: f64 = 1e-10;

/// Smallest `t* ∈ (0, length]` at which `wall` reaches `level` along `seg`.
///
/// The side the segment starts on is taken from the sign of `value − level`
/// at `t = 0`, or from the direction of motion when the start lies within
/// `1e-10` of the level. Near-tangential approaches are refined; touching the
/// level without crossing yields [`Error::TangencyUnresolved`].
pub fn segment_curve_crossing(seg: &LiftedSegment, wall: &dyn CurveField, level: f64) -> Result<Option<Crossing>> {
    if seg.length <= 0.0 {
        return Ok(None);
    }
    let g = |t: f64| wall.value(&seg.at(t)) - level;
    let dg = |t: f64| wall.gradient(&seg.at(t)).dot(&seg.direction);
    let d2g = |t: f64| {
        let d = seg.direction;
        (wall.hessian(&seg.at(t)) * d).dot(&d)
    };

    let h = (0.01f64).min(seg.length / 64.0);
    let n = (seg.length / h).ceil().max(1.0) as usize;
    let ts: Vec<f64> = (0..=n).map(|i| seg.length * i as f64 / n as f64).collect();

    let g0 = g(0.0);
    let side = if g0.abs() > ENTRY_TOL {
        g0.signum()
    } else {
        let slope = dg(0.0);
        if slope.abs() > 1e-12 {
            slope.signum()
        } else {
            let g1 = g(ts[1]);
            if g1 == 0.0 {
                1.0
            } else {
                g1.signum()
            }
        }
    };
    // f > 0 on the starting side
    let f = |t: f64| side * g(t);
    let mut fs: Vec<f64> = ts.iter().map(|&t| f(t)).collect();
    if g0.abs() <= ENTRY_TOL {
        fs[0] = fs[0].abs();
    }

    for i in 1..=n {
        let touches = fs[i] == 0.0 && i < n && fs[i + 1] > 0.0;
        if fs[i] <= 0.0 && !touches {
            let (a, b) = if i == 1 && g0.abs() <= ENTRY_TOL {
                // starting on the level: the bracket must begin past the start
                let tm = first_positive(&f, ts[0], ts[1]);
                match tm {
                    Some(tm) => (tm, ts[1]),
                    None => continue,
                }
            } else {
                (ts[i - 1], ts[i])
            };
            let t = refine_root(&g, &dg, a, b);
            return Ok(Some(Crossing { t, point: seg.at(t) }));
        }
        // interior local minimum of f: may hide a pair of crossings or a tangency
        if i < n && fs[i] <= fs[i - 1] && fs[i] <= fs[i + 1] && fs[i + 1] > 0.0 {
            let tm = refine_extremum(&dg, &d2g, ts[i - 1], ts[i + 1]);
            let fm = f(tm).min(fs[i]);
            if fm < 0.0 {
                let t = refine_root(&g, &dg, ts[i - 1], tm);
                return Ok(Some(Crossing { t, point: seg.at(t) }));
            }
            if fm <= TANGENCY_TOL {
                return Err(Error::TangencyUnresolved { t: tm, gap: fm });
            }
        }
    }
    Ok(None)
}

// Leftmost sample in (a, b] where f is positive, used to step off a start on the level.
fn first_positive(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> Option<f64> {
    let mut t = a;
    let mut step = (b - a) / 1024.0;
    while t < b {
        t += step;
        if t >= b {
            return None;
        }
        if f(t) > 0.0 {
            return Some(t);
        }
        step *= 2.0;
    }
    None
}

/// Safeguarded Newton–bisection on `g` over a sign-changing bracket.
fn refine_root(g: &dyn Fn(f64) -> f64, dg: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let (mut lo, mut hi) = (a, b);
    let mut glo = g(lo);
    let ghi = g(hi);
    if ghi == 0.0 {
        return hi;
    }
    let mut t = 0.5 * (lo + hi);
    for _ in 0..200 {
        let gt = g(t);
        if gt.abs() <= 1e-15 || hi - lo <= 4.0 * f64::EPSILON * hi.abs().max(1.0) {
            break;
        }
        if gt.signum() == glo.signum() {
            lo = t;
            glo = gt;
        } else {
            hi = t;
        }
        let d = dg(t);
        let newton = t - gt / d;
        t = if d != 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
    }
    // Prefer the far side of the level so the reported point never sits on the start side.
    if g(t).abs() > LEVEL_TOL && g(hi).abs() <= LEVEL_TOL {
        hi
    } else {
        t
    }
}

/// Critical point of `g` inside `[a, b]` via Newton on `g'`, falling back to bisection.
fn refine_extremum(dg: &dyn Fn(f64) -> f64, d2g: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let (mut lo, mut hi) = (a, b);
    let dlo = dg(lo);
    let dhi = dg(hi);
    if dlo.signum() == dhi.signum() {
        return if dlo.abs() < dhi.abs() { lo } else { hi };
    }
    let mut t = 0.5 * (lo + hi);
    for _ in 0..100 {
        let d = dg(t);
        if d == 0.0 || hi - lo <= 4.0 * f64::EPSILON * hi.abs().max(1.0) {
            break;
        }
        if d.signum() == dlo.signum() {
            lo = t;
        } else {
            hi = t;
        }
        let c = d2g(t);
        let newton = t - d / c;
        t = if c != 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
    }
    t
}
