//! Billiard flow on a table `D ⊂ T²` bounded by smooth implicit walls.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::contour::{trace_level_set, Grid};
use crate::error::{Error, Result};
use crate::torus::{segment_curve_crossing, ImplicitCurve, LiftedSegment, TorusPoint};

/// Impacts with `|⟨p, T⟩| > 1 − GRAZING_TOL` are flagged as grazing.
pub const GRAZING_TOL: f64 = 1e-4;
/// Allowed excursion outside `D` before a trajectory is declared lost.
pub const ESCAPE_TOL: f64 = 1e-8;
/// Distance tolerance for "point lies on a wall".
pub const ON_WALL_TOL: f64 = 1e-8;

/// One wall: `D` lies on the side where `inside_sign·(value − level) ≤ 0`.
#[derive(Debug, Clone)]
pub struct Wall {
    pub curve: ImplicitCurve,
    pub level: f64,
    pub inside_sign: f64,
}

impl Wall {
    /// Signed value, nonpositive in `D`.
    pub fn signed(&self, x: &Vector2<f64>) -> f64 {
        self.inside_sign * (self.curve.value(x) - self.level)
    }

    /// Unit normal pointing out of `D`.
    pub fn outward_normal(&self, x: &Vector2<f64>) -> Result<Vector2<f64>> {
        let g = self.curve.gradient(x) * self.inside_sign;
        let n = g.norm();
        if n < 1e-12 {
            return Err(Error::DegenerateNormal { norm: n });
        }
        Ok(g / n)
    }
}

#[derive(Debug, Clone)]
pub struct BilliardTable {
    pub walls: Vec<Wall>,
    pub horizon_bound_hint: Option<f64>,
}

/// Phase point of the billiard flow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BilliardState {
    pub q: TorusPoint,
    pub p: Vector2<f64>,
}

impl BilliardState {
    pub fn new(q: TorusPoint, p: Vector2<f64>) -> Self {
        Self { q, p: p.normalize() }
    }

    pub fn from_angle(q: TorusPoint, angle: f64) -> Self {
        Self { q, p: Vector2::new(angle.cos(), angle.sin()) }
    }

    pub fn reversed(&self) -> Self {
        Self { q: self.q, p: -self.p }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BounceRecord {
    pub time: f64,
    pub point: TorusPoint,
    /// Angle between the incoming direction and the wall tangent.
    pub incidence_angle: f64,
    pub wall_index: usize,
    pub grazing: bool,
}

#[derive(Debug, Clone)]
pub struct FlowResult {
    pub state: BilliardState,
    pub bounces: Vec<BounceRecord>,
}

/// Row of a sampled billiard trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub t: f64,
    pub theta: f64,
    pub phi: f64,
    pub px: f64,
    pub py: f64,
    pub event: TraceEvent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceEvent {
    Flight,
    Bounce,
    Grazing,
}

impl TraceEvent {
    pub fn as_str(&self) -> &'static str {
        match self {
            TraceEvent::Flight => "flight",
            TraceEvent::Bounce => "bounce",
            TraceEvent::Grazing => "grazing",
        }
    }
}

impl BilliardTable {
    pub fn new(walls: Vec<Wall>) -> Self {
        Self { walls, horizon_bound_hint: None }
    }

    /// `max_i` of the signed wall values: nonpositive exactly on `D`.
    pub fn indicator(&self, x: &Vector2<f64>) -> f64 {
        self.walls.iter().map(|w| w.signed(x)).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn contains(&self, q: &TorusPoint, tol: f64) -> bool {
        self.indicator(&q.lift()) <= tol
    }

    /// Minimum over walls of `|F_i| / |∇F_i|`, a first-order distance to `∂D`.
    pub fn wall_clearance(&self, x: &Vector2<f64>) -> f64 {
        self.walls
            .iter()
            .map(|w| {
                let g = w.curve.gradient(x).norm().max(1e-300);
                (w.curve.value(x) - w.level).abs() / g
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Sampled structural checks: nonempty interior and nonvanishing wall gradients.
    pub fn validate(&self) -> Result<()> {
        let grid = 128;
        let h = std::f64::consts::TAU / grid as f64;
        let interior = (0..grid * grid).any(|k| {
            let x = Vector2::new((k % grid) as f64 * h, (k / grid) as f64 * h);
            self.indicator(&x) < 0.0
        });
        if !interior {
            return Err(Error::InvalidConfig("table has empty interior".into()));
        }
        for i in 0..self.walls.len() {
            for x in self.wall_points(i, 200)? {
                let n = self.walls[i].curve.gradient(&x).norm();
                if n < 1e-6 {
                    return Err(Error::DegenerateNormal { norm: n });
                }
            }
        }
        Ok(())
    }

    /// About `count` points on the part of wall `index` that bounds `D`,
    /// equally spaced in arclength and projected onto the level set.
    pub fn wall_points(&self, index: usize, count: usize) -> Result<Vec<Vector2<f64>>> {
        let wall = &self.walls[index];
        let field = |x: &Vector2<f64>| wall.curve.value(x) - wall.level;
        let set = trace_level_set(&field, &Grid::torus(256));
        let total: f64 = set.components.iter().map(|c| c.length()).sum();
        if total == 0.0 {
            return Ok(Vec::new());
        }
        let mut out = Vec::with_capacity(count);
        for c in &set.components {
            let k = ((count as f64) * c.length() / total).round() as usize;
            for x in c.resample(k.max(1)) {
                let x = project_to_level(&*wall.curve, wall.level, x)?;
                if self.indicator(&x) <= ON_WALL_TOL {
                    out.push(Vector2::new(crate::torus::wrap_angle(x[0]), crate::torus::wrap_angle(x[1])));
                }
            }
        }
        Ok(out)
    }
}

/// Newton projection along the gradient onto `{value = level}`.
pub fn project_to_level(curve: &dyn crate::torus::CurveField, level: f64, mut x: Vector2<f64>) -> Result<Vector2<f64>> {
    for _ in 0..50 {
        let r = curve.value(&x) - level;
        let g = curve.gradient(&x);
        let n2 = g.norm_squared();
        if n2 < 1e-24 {
            return Err(Error::DegenerateNormal { norm: n2.sqrt() });
        }
        x -= g * (r / n2);
        if r.abs() <= 1e-14 {
            break;
        }
    }
    Ok(x)
}

/// Geodesic curvature of wall `wall_index` at `point`: the divergence of the
/// unit normal pointing out of `D`. Negative means the wall is dispersing.
pub fn wall_curvature(table: &BilliardTable, wall_index: usize, point: &TorusPoint) -> Result<f64> {
    let wall = table
        .walls
        .get(wall_index)
        .ok_or_else(|| Error::InvalidConfig(format!("no wall {wall_index}")))?;
    let x = point.lift();
    let g = wall.curve.gradient(&x);
    let n = g.norm();
    if n < 1e-12 {
        return Err(Error::DegenerateNormal { norm: n });
    }
    let residual = (wall.curve.value(&x) - wall.level).abs() / n;
    if residual > ON_WALL_TOL {
        return Err(Error::NotOnWall { wall: wall_index, residual });
    }
    let h = wall.curve.hessian(&x);
    let lap = h.trace();
    let hgg = (h * g).dot(&g);
    Ok(wall.inside_sign * (n * n * lap - hgg) / (n * n * n))
}

enum Hit {
    Crossing(f64, Vector2<f64>),
    Tangent(f64),
}

/// Advances the billiard flow by arclength `t`.
pub fn billiard_flow(table: &BilliardTable, s: &BilliardState, t: f64) -> Result<FlowResult> {
    let mut rows = Vec::new();
    flow_impl(table, s, t, None, &mut rows)
}

/// Like [`billiard_flow`] but also records the trajectory every `stride` of
/// arclength plus one row per impact.
pub fn billiard_trace(table: &BilliardTable, s: &BilliardState, t: f64, stride: f64) -> Result<(FlowResult, Vec<TraceRow>)> {
    let mut rows = Vec::new();
    let res = flow_impl(table, s, t, Some(stride), &mut rows)?;
    Ok((res, rows))
}

fn flow_impl(
    table: &BilliardTable,
    s: &BilliardState,
    t: f64,
    stride: Option<f64>,
    rows: &mut Vec<TraceRow>,
) -> Result<FlowResult> {
    let mut pos = s.q.lift();
    let mut p = s.p;
    let mut elapsed = 0.0;
    let mut bounces = Vec::new();
    let mut next_sample = 0.0;

    let emit = |rows: &mut Vec<TraceRow>, time: f64, x: &Vector2<f64>, p: &Vector2<f64>, ev: TraceEvent| {
        let q = TorusPoint::from_lift(x);
        rows.push(TraceRow { t: time, theta: q.theta, phi: q.phi, px: p[0], py: p[1], event: ev });
    };

    loop {
        let remaining = t - elapsed;
        if remaining <= 0.0 {
            break;
        }
        let seg = LiftedSegment::new(pos, p, remaining);
        let mut best: Option<(usize, Hit)> = None;
        for (i, w) in table.walls.iter().enumerate() {
            let hit = match segment_curve_crossing(&seg, &*w.curve, w.level) {
                Ok(Some(c)) => Hit::Crossing(c.t, c.point),
                Ok(None) => continue,
                Err(Error::TangencyUnresolved { t, .. }) => Hit::Tangent(t),
                Err(e) => return Err(e),
            };
            let th = match hit {
                Hit::Crossing(t, _) | Hit::Tangent(t) => t,
            };
            let better = match &best {
                None => true,
                Some((_, Hit::Crossing(tb, _))) | Some((_, Hit::Tangent(tb))) => th < *tb,
            };
            if better {
                best = Some((i, hit));
            }
        }

        let (flight, hit) = match best {
            None => (remaining, None),
            Some((i, Hit::Crossing(th, x))) => (th, Some((i, x, false))),
            Some((i, Hit::Tangent(th))) => (th, Some((i, seg.at(th), true))),
        };

        if let Some(stride) = stride {
            while next_sample <= elapsed + flight && next_sample <= t {
                let x = pos + p * (next_sample - elapsed);
                emit(rows, next_sample, &x, &p, TraceEvent::Flight);
                next_sample += stride;
            }
        }

        elapsed += flight;
        match hit {
            None => {
                pos += p * flight;
                break;
            }
            Some((i, x, touched)) => {
                pos = x;
                let n = table.walls[i].outward_normal(&pos)?;
                let pn = p.dot(&n);
                let tangential = (1.0 - pn * pn).max(0.0).sqrt();
                let grazing = touched || tangential > 1.0 - GRAZING_TOL;
                bounces.push(BounceRecord {
                    time: elapsed,
                    point: TorusPoint::from_lift(&pos),
                    incidence_angle: pn.abs().min(1.0).asin(),
                    wall_index: i,
                    grazing,
                });
                p = (p - n * (2.0 * pn)).normalize();
                if stride.is_some() {
                    let ev = if grazing { TraceEvent::Grazing } else { TraceEvent::Bounce };
                    emit(rows, elapsed, &pos, &p, ev);
                }
            }
        }
        let excess = table.indicator(&pos);
        if excess > ESCAPE_TOL {
            return Err(Error::EscapedDomain { excess });
        }
    }
    let excess = table.indicator(&pos);
    if excess > ESCAPE_TOL {
        return Err(Error::EscapedDomain { excess });
    }
    Ok(FlowResult { state: BilliardState { q: TorusPoint::from_lift(&pos), p }, bounces })
}
