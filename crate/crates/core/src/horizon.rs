//! Search for long collision-free chords of a torus billiard table.
//!
//! Lines are marched with sphere tracing: inside `D` the step is a lower
//! bound on the distance to the nearest wall, `|F_i − c_i| / Lip(F_i)`.

use std::f64::consts::TAU;

use nalgebra::Vector2;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::billiard::BilliardTable;
use crate::rng::stream_rng;
use crate::torus::LiftedSegment;

const HIT_TOL: f64 = 1e-8;
const MAX_MARCH_STEPS: usize = 1_000_000;

/// Which lines the search visits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonGrid {
    /// Rational directions `(p, q)` with `|p|, |q| ≤ q_max`.
    pub q_max: i64,
    pub random_directions: usize,
    /// Parallel lines per direction.
    pub offsets: usize,
    /// Parallel lines for the dedicated slope ±1 sweep.
    pub slope_one_offsets: usize,
    /// Arclength traced along each random-direction line beyond its start
    /// point. Chords are always followed to both ends, capped at `t_max`, so
    /// zero still measures the full chord through the start point.
    pub random_trace_length: f64,
    pub seed: u64,
}

impl Default for HorizonGrid {
    fn default() -> Self {
        Self { q_max: 12, random_directions: 10_000, offsets: 400, slope_one_offsets: 4000, random_trace_length: 0.0, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonReport {
    pub t_max: f64,
    /// Longest free chord seen, capped at `t_max`.
    pub max_free_flight: f64,
    pub witness: Option<LiftedSegment>,
    /// Longest free chord among slope ±1 lines.
    pub slope_one_max: f64,
    pub directions: usize,
    pub lines: usize,
}

struct Marcher<'a> {
    table: &'a BilliardTable,
    lips: Vec<f64>,
}

impl<'a> Marcher<'a> {
    fn new(table: &'a BilliardTable) -> Self {
        let lips = table.walls.iter().map(|w| w.curve.lipschitz().unwrap_or_else(|| sampled_lipschitz(w))).collect();
        Self { table, lips }
    }

    fn signed(&self, x: &Vector2<f64>) -> (f64, f64) {
        // (indicator, distance bound): inside D the bound is to the nearest
        // wall, outside it is to leaving every obstacle
        let mut ind = f64::NEG_INFINITY;
        let mut near = f64::INFINITY;
        let mut far: f64 = 0.0;
        for (w, &l) in self.table.walls.iter().zip(&self.lips) {
            let s = w.signed(x);
            ind = ind.max(s);
            near = near.min(s.abs() / l);
            if s > 0.0 {
                far = far.max(s / l);
            }
        }
        if ind <= 0.0 {
            (ind, near)
        } else {
            (ind, far)
        }
    }

    fn inside(&self, x: &Vector2<f64>) -> bool {
        self.signed(x).0 <= 0.0
    }

    /// Distance travelled inside `D` from `x` before reaching a wall, at most `max`.
    fn to_wall(&self, x: Vector2<f64>, v: Vector2<f64>, max: f64) -> f64 {
        let mut s = 0.0;
        for _ in 0..MAX_MARCH_STEPS {
            let (ind, d) = self.signed(&(x + v * s));
            if ind > 0.0 || d < HIT_TOL {
                return s;
            }
            s += d;
            if s >= max {
                return max;
            }
        }
        s
    }

    /// Distance from a point at or beyond a wall until `D` is re-entered.
    fn through_obstacle(&self, x: Vector2<f64>, v: Vector2<f64>, max: f64) -> f64 {
        let mut s = 0.0;
        // step off a wall we are resting on
        let mut nudges = 0;
        while self.inside(&(x + v * s)) && nudges < 20 {
            s += HIT_TOL;
            nudges += 1;
        }
        for _ in 0..MAX_MARCH_STEPS {
            let (ind, d) = self.signed(&(x + v * s));
            if ind <= 0.0 {
                return s;
            }
            s += d.max(HIT_TOL);
            if s >= max {
                return max;
            }
        }
        s
    }

    /// Longest chord along the line `o + s v`, `s ∈ [0, len]`, with chords
    /// followed past both ends up to `cap`. Returns `(length, chord start)`.
    fn longest_chord(&self, o: Vector2<f64>, v: Vector2<f64>, len: f64, cap: f64) -> (f64, Vector2<f64>) {
        let mut best = (0.0, o);
        let mut s;
        let mut start;
        if self.inside(&o) {
            start = -self.to_wall(o, -v, cap);
            s = 0.0;
        } else {
            // the first chord is measured even when it starts past `len`
            s = self.through_obstacle(o, v, len + cap);
            start = s;
            if s >= len + cap {
                return best;
            }
        }
        loop {
            let room = cap - (s - start);
            s += self.to_wall(o + v * s, v, room);
            let chord = s - start;
            if chord > best.0 {
                best = (chord, o + v * start);
            }
            if chord >= cap || s >= len {
                return best;
            }
            s += self.through_obstacle(o + v * s, v, len + cap - s);
            start = s;
            if s >= len {
                return best;
            }
        }
    }
}

fn sampled_lipschitz(w: &crate::billiard::Wall) -> f64 {
    let n = 256;
    let h = TAU / n as f64;
    let mut m: f64 = 0.0;
    for k in 0..n * n {
        let x = Vector2::new((k % n) as f64 * h, (k / n) as f64 * h);
        m = m.max(w.curve.gradient(&x).norm());
    }
    (1.25 * m).max(1e-12)
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

/// Primitive integer directions up to sign with entries bounded by `q_max`.
pub fn rational_directions(q_max: i64) -> Vec<(i64, i64)> {
    let mut dirs = vec![(1, 0), (0, 1)];
    for p in 1..=q_max {
        for q in -q_max..=q_max {
            if q != 0 && gcd(p, q) == 1 {
                dirs.push((p, q));
            }
        }
    }
    dirs
}

#[derive(Clone, Copy)]
struct Best {
    len: f64,
    start: Vector2<f64>,
    dir: Vector2<f64>,
}

impl Best {
    fn none() -> Self {
        Self { len: 0.0, start: Vector2::zeros(), dir: Vector2::new(1.0, 0.0) }
    }
    fn max(self, o: Self) -> Self {
        if o.len > self.len {
            o
        } else {
            self
        }
    }
}

fn sweep_closed(m: &Marcher, p: i64, q: i64, offsets: usize, cap: f64) -> Best {
    let norm = ((p * p + q * q) as f64).sqrt();
    let v = Vector2::new(p as f64, q as f64) / norm;
    let perp = Vector2::new(-v[1], v[0]);
    // distinct closed lines of this slope are spread over a perpendicular width 2π/|(p,q)|
    let width = TAU / norm;
    let period = TAU * norm;
    (0..offsets)
        .map(|k| {
            let o = perp * (width * (k as f64 + 0.5) / offsets as f64);
            let (len, start) = m.longest_chord(o, v, period, cap);
            Best { len, start, dir: v }
        })
        .fold(Best::none(), Best::max)
}

/// Samples lines of many directions and returns the longest free chord.
pub fn finite_horizon_search(table: &BilliardTable, t_max: f64, grid: &HorizonGrid) -> HorizonReport {
    let m = Marcher::new(table);
    let rational = rational_directions(grid.q_max);

    let from_rational = rational
        .par_iter()
        .map(|&(p, q)| sweep_closed(&m, p, q, grid.offsets, t_max))
        .reduce(Best::none, Best::max);

    let from_random = (0..grid.random_directions)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream_rng(grid.seed, k as u64);
            let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
            let v = Vector2::new(angle.cos(), angle.sin());
            // jittered stratified start points over the fundamental square
            let side = (grid.offsets as f64).sqrt().ceil() as usize;
            let cell = TAU / side as f64;
            (0..grid.offsets)
                .map(|j| {
                    let jitter = Vector2::new(rng.random::<f64>(), rng.random::<f64>());
                    let o = Vector2::new((j % side) as f64 + jitter[0], (j / side) as f64 + jitter[1]) * cell;
                    let (len, start) = m.longest_chord(o, v, grid.random_trace_length, t_max);
                    Best { len, start, dir: v }
                })
                .fold(Best::none(), Best::max)
        })
        .reduce(Best::none, Best::max);

    let slope_one = [(1, 1), (1, -1)]
        .par_iter()
        .map(|&(p, q)| sweep_closed(&m, p, q, grid.slope_one_offsets, t_max))
        .reduce(Best::none, Best::max);

    let best = from_rational.max(from_random).max(slope_one);
    let max_free_flight = best.len.min(t_max);
    let witness = (best.len >= t_max).then(|| LiftedSegment::new(best.start, best.dir, t_max));
    HorizonReport {
        t_max,
        max_free_flight,
        witness,
        slope_one_max: slope_one.len.min(t_max),
        directions: rational.len() + grid.random_directions + 2,
        lines: (rational.len() + grid.random_directions) * grid.offsets + 2 * grid.slope_one_offsets,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::billiard::Wall;
    use crate::torus::{CosineSum, ImplicitCurve, TorusDiscField};

    fn small() -> HorizonGrid {
        HorizonGrid { q_max: 4, random_directions: 50, offsets: 40, slope_one_offsets: 200, random_trace_length: TAU, seed: 1 }
    }

    #[test]
    fn empty_table_has_infinite_horizon() {
        let table = BilliardTable::new(vec![]);
        let rep = finite_horizon_search(&table, 50.0, &small());
        assert_eq!(rep.max_free_flight, 50.0);
        assert!(rep.witness.is_some());
    }

    #[test]
    fn small_disc_leaves_free_corridors() {
        let table = BilliardTable::new(vec![Wall {
            curve: ImplicitCurve::new(TorusDiscField { center: Vector2::new(3.0, 3.0) }),
            level: 0.25,
            inside_sign: -1.0,
        }]);
        let rep = finite_horizon_search(&table, 50.0, &small());
        let w = rep.witness.expect("horizontal corridor is free");
        for k in 0..=500 {
            let x = w.at(w.length * k as f64 / 500.0);
            assert!(table.indicator(&x) <= 1e-8);
        }
    }

    #[test]
    fn cosine_obstacle_chord_matches_closed_form() {
        // single wall cosθ + cosφ ≤ 1.6 along φ = π: free for all θ, so any
        // horizontal line through φ = π is a witness
        let table = BilliardTable::new(vec![Wall {
            curve: ImplicitCurve::new(CosineSum { a: 1.0, b: 1.0 }),
            level: 1.6,
            inside_sign: 1.0,
        }]);
        let m = Marcher::new(&table);
        let (len, _) = m.longest_chord(Vector2::new(0.0, std::f64::consts::PI), Vector2::new(1.0, 0.0), TAU, 50.0);
        assert_eq!(len, 50.0);
        // along φ = 0 the chord runs between θ = ±arccos(0.6)
        let (len, start) = m.longest_chord(Vector2::new(std::f64::consts::PI, 0.0), Vector2::new(1.0, 0.0), TAU, 50.0);
        let expect = TAU - 2.0 * 0.6f64.acos();
        assert!((len - expect).abs() < 1e-6, "{len} vs {expect}");
        assert!((start[0] - 0.6f64.acos()).abs() < 1e-6);
    }

    #[test]
    fn rational_direction_count() {
        let d = rational_directions(2);
        // (1,0) (0,1) (1,±1) (1,±2) (2,±1)
        assert_eq!(d.len(), 8);
    }
}
