//! Marching squares on a (possibly periodic) rectangular grid.
//!
//! Crossing points live on grid edges; each cell contributes up to two
//! segments joining them. Segments sharing an edge are chained into ordered
//! polylines, one per connected component.

use std::collections::HashMap;
use std::f64::consts::TAU;

use nalgebra::Vector2;

/// Axis-aligned sampling grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub origin: Vector2<f64>,
    pub extent: Vector2<f64>,
    pub n: usize,
    /// Identify opposite sides (torus) instead of clipping.
    pub periodic: bool,
}

impl Grid {
    /// Periodic grid over the fundamental square `[0, 2π)²`.
    pub fn torus(n: usize) -> Self {
        Self { origin: Vector2::zeros(), extent: Vector2::new(TAU, TAU), n, periodic: true }
    }

    /// Clipped grid over the closed square `[-π, π]²`.
    pub fn centered_square(n: usize) -> Self {
        let pi = std::f64::consts::PI;
        Self { origin: Vector2::new(-pi, -pi), extent: Vector2::new(TAU, TAU), n, periodic: false }
    }

    fn nodes(&self) -> usize {
        if self.periodic {
            self.n
        } else {
            self.n + 1
        }
    }

    fn node(&self, i: usize, j: usize) -> Vector2<f64> {
        let h = self.extent / self.n as f64;
        self.origin + Vector2::new(i as f64 * h[0], j as f64 * h[1])
    }

    fn sample(&self, field: &dyn Fn(&Vector2<f64>) -> f64) -> Vec<f64> {
        let m = self.nodes();
        let mut v = Vec::with_capacity(m * m);
        for j in 0..m {
            for i in 0..m {
                let mut x = field(&self.node(i, j));
                // keep nodes off the level so every crossing is a strict sign change
                if x == 0.0 {
                    x = f64::MIN_POSITIVE;
                }
                v.push(x);
            }
        }
        v
    }
}

/// Edge identifier: horizontal edges are `(i,j)–(i+1,j)`, vertical `(i,j)–(i,j+1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Edge {
    H(usize, usize),
    V(usize, usize),
}

/// Extracted level set.
#[derive(Debug, Clone)]
pub struct LevelSet {
    /// Each component as an ordered list of points. Closed loops repeat no
    /// point; on a periodic grid coordinates are unwrapped along the loop.
    pub components: Vec<Polyline>,
}

#[derive(Debug, Clone)]
pub struct Polyline {
    pub points: Vec<Vector2<f64>>,
    pub closed: bool,
    /// Deck translation picked up around a closed loop (zero if contractible).
    pub period: Vector2<f64>,
}

impl Polyline {
    pub fn length(&self) -> f64 {
        let mut l: f64 = self.points.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
        if self.closed && self.points.len() > 1 {
            l += (self.points[0] + self.period - self.points[self.points.len() - 1]).norm();
        }
        l
    }

    /// `count` points equally spaced in arclength.
    pub fn resample(&self, count: usize) -> Vec<Vector2<f64>> {
        let mut pts = self.points.clone();
        if self.closed {
            pts.push(self.points[0] + self.period);
        }
        let total = self.length();
        if count == 0 || pts.len() < 2 || total == 0.0 {
            return pts.into_iter().take(count).collect();
        }
        let step = if self.closed { total / count as f64 } else { total / (count.max(2) - 1) as f64 };
        let mut out = Vec::with_capacity(count);
        let mut seg = 0;
        let mut seg_start = 0.0;
        for k in 0..count {
            let s = k as f64 * step;
            while seg + 1 < pts.len() - 1 && seg_start + (pts[seg + 1] - pts[seg]).norm() < s {
                seg_start += (pts[seg + 1] - pts[seg]).norm();
                seg += 1;
            }
            let len = (pts[seg + 1] - pts[seg]).norm();
            let a = if len > 0.0 { ((s - seg_start) / len).clamp(0.0, 1.0) } else { 0.0 };
            out.push(pts[seg] + (pts[seg + 1] - pts[seg]) * a);
        }
        out
    }
}

/// Traces `{field = 0}` on `grid`.
pub fn trace_level_set(field: &dyn Fn(&Vector2<f64>) -> f64, grid: &Grid) -> LevelSet {
    let m = grid.nodes();
    let vals = grid.sample(field);
    let cells = grid.n;
    let wrap = |k: usize| if grid.periodic { k % m } else { k };
    let val = |i: usize, j: usize| vals[wrap(j) * m + wrap(i)];

    let crossing = |e: Edge| -> Vector2<f64> {
        let (a, b, pa, pb) = match e {
            Edge::H(i, j) => (val(i, j), val(i + 1, j), grid.node(i, j), grid.node(i + 1, j)),
            Edge::V(i, j) => (val(i, j), val(i, j + 1), grid.node(i, j), grid.node(i, j + 1)),
        };
        let s = a / (a - b);
        pa + (pb - pa) * s
    };
    let canon = |e: Edge| match e {
        Edge::H(i, j) => Edge::H(wrap(i), wrap(j)),
        Edge::V(i, j) => Edge::V(wrap(i), wrap(j)),
    };

    // segments in cell-local (unwrapped) coordinates, keyed by canonical edges
    let mut segs: Vec<(Edge, Edge, Vector2<f64>, Vector2<f64>)> = Vec::new();
    for j in 0..cells {
        for i in 0..cells {
            let v = [val(i, j), val(i + 1, j), val(i + 1, j + 1), val(i, j + 1)];
            let bits = v.iter().enumerate().fold(0u8, |acc, (k, &x)| acc | (((x > 0.0) as u8) << k));
            // edges: 0 bottom, 1 right, 2 top, 3 left
            let edges = [Edge::H(i, j), Edge::V(i + 1, j), Edge::H(i, j + 1), Edge::V(i, j)];
            let pairs: &[(usize, usize)] = match bits {
                0 | 15 => &[],
                1 | 14 => &[(3, 0)],
                2 | 13 => &[(0, 1)],
                3 | 12 => &[(3, 1)],
                4 | 11 => &[(1, 2)],
                6 | 9 => &[(0, 2)],
                7 | 8 => &[(3, 2)],
                5 | 10 => {
                    let centre = v.iter().sum::<f64>() / 4.0;
                    let centre_pos = centre > 0.0;
                    let corner0_pos = bits & 1 != 0;
                    if centre_pos == corner0_pos {
                        &[(3, 2), (0, 1)]
                    } else {
                        &[(3, 0), (1, 2)]
                    }
                }
                _ => unreachable!(),
            };
            for &(a, b) in pairs {
                segs.push((canon(edges[a]), canon(edges[b]), crossing(edges[a]), crossing(edges[b])));
            }
        }
    }

    // adjacency: each canonical edge touches at most two segments
    let mut adj: HashMap<Edge, Vec<usize>> = HashMap::new();
    for (k, s) in segs.iter().enumerate() {
        adj.entry(s.0).or_default().push(k);
        adj.entry(s.1).or_default().push(k);
    }

    let mut used = vec![false; segs.len()];
    let mut components = Vec::new();
    for start in 0..segs.len() {
        if used[start] {
            continue;
        }
        // walk backwards to an open end if there is one, so open curves come out whole
        let mut first = start;
        let mut entry = segs[start].0;
        let mut guard = 0;
        loop {
            let others: Vec<usize> = adj[&entry].iter().copied().filter(|&k| k != first).collect();
            if others.is_empty() || others[0] == start || guard > segs.len() {
                break;
            }
            let k = others[0];
            entry = if segs[k].0 == entry { segs[k].1 } else { segs[k].0 };
            first = k;
            guard += 1;
        }
        let (mut pts, _, mut exit) = orient(&segs[first], entry);
        let mut cur = first;
        used[first] = true;
        let closed;
        loop {
            let next = adj[&exit].iter().copied().find(|&k| k != cur && !used[k]);
            match next {
                Some(k) => {
                    used[k] = true;
                    let (p2, _, e2) = orient(&segs[k], exit);
                    let last = *pts.last().unwrap();
                    // unwrap across the periodic seam
                    let shift = seam_shift(&last, &p2[0], grid);
                    pts.push(p2[1] + shift);
                    cur = k;
                    exit = e2;
                }
                None => {
                    closed = exit == entry;
                    break;
                }
            }
        }
        let mut period = Vector2::zeros();
        if closed && pts.len() > 1 {
            let last = pts.pop().unwrap();
            period = last - pts[0];
        }
        components.push(Polyline { points: pts, closed, period });
    }
    LevelSet { components }
}

fn orient(seg: &(Edge, Edge, Vector2<f64>, Vector2<f64>), entry: Edge) -> (Vec<Vector2<f64>>, usize, Edge) {
    if seg.0 == entry {
        (vec![seg.2, seg.3], 0, seg.1)
    } else {
        (vec![seg.3, seg.2], 0, seg.0)
    }
}

fn seam_shift(a: &Vector2<f64>, b: &Vector2<f64>, grid: &Grid) -> Vector2<f64> {
    if !grid.periodic {
        return Vector2::zeros();
    }
    let d = a - b;
    Vector2::new((d[0] / grid.extent[0]).round() * grid.extent[0], (d[1] / grid.extent[1]).round() * grid.extent[1])
}

/// Number of connected components of `{field > 0}` sampled on grid nodes
/// (4-connectivity, wrapping on periodic grids).
pub fn count_positive_regions(field: &dyn Fn(&Vector2<f64>) -> f64, grid: &Grid) -> usize {
    let m = grid.nodes();
    let vals = grid.sample(field);
    let mut seen = vec![false; m * m];
    let mut count = 0;
    let mut stack = Vec::new();
    for s in 0..m * m {
        if seen[s] || vals[s] <= 0.0 {
            continue;
        }
        count += 1;
        seen[s] = true;
        stack.push(s);
        while let Some(k) = stack.pop() {
            let (i, j) = (k % m, k / m);
            let mut nb = Vec::with_capacity(4);
            if grid.periodic {
                nb.extend([((i + 1) % m, j), ((i + m - 1) % m, j), (i, (j + 1) % m), (i, (j + m - 1) % m)]);
            } else {
                if i + 1 < m {
                    nb.push((i + 1, j));
                }
                if i > 0 {
                    nb.push((i - 1, j));
                }
                if j + 1 < m {
                    nb.push((i, j + 1));
                }
                if j > 0 {
                    nb.push((i, j - 1));
                }
            }
            for (a, b) in nb {
                let q = b * m + a;
                if !seen[q] && vals[q] > 0.0 {
                    seen[q] = true;
                    stack.push(q);
                }
            }
        }
    }
    count
}
