//! Triangle meshes of implicit level sets by marching tetrahedra.

use std::collections::HashMap;
use std::io::Write;

use nalgebra::Vector3;

#[derive(Debug, Clone, Default)]
pub struct Mesh {
    pub vertices: Vec<Vector3<f64>>,
    pub faces: Vec<[usize; 3]>,
}

impl Mesh {
    pub fn write_obj<W: Write>(&self, mut w: W, header: &str) -> std::io::Result<()> {
        for line in header.lines() {
            writeln!(w, "# {line}")?;
        }
        for v in &self.vertices {
            writeln!(w, "v {:.9} {:.9} {:.9}", v[0], v[1], v[2])?;
        }
        for f in &self.faces {
            writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
        }
        Ok(())
    }
}

// Kuhn subdivision of the unit cube into six tetrahedra sharing the main diagonal.
const CUBE: [[usize; 3]; 8] = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0], [0, 0, 1], [1, 0, 1], [0, 1, 1], [1, 1, 1]];
const TETS: [[usize; 4]; 6] = [[0, 1, 3, 7], [0, 3, 2, 7], [0, 2, 6, 7], [0, 6, 4, 7], [0, 4, 5, 7], [0, 5, 1, 7]];

/// Zero set of `f` on the box `[lo, hi]` sampled with `n` cells per axis.
/// Vertices on shared grid edges are merged.
pub fn marching_tetrahedra(f: &dyn Fn(&Vector3<f64>) -> f64, lo: Vector3<f64>, hi: Vector3<f64>, n: [usize; 3]) -> Mesh {
    let h = Vector3::new((hi[0] - lo[0]) / n[0] as f64, (hi[1] - lo[1]) / n[1] as f64, (hi[2] - lo[2]) / n[2] as f64);
    let idx = |i: usize, j: usize, k: usize| (k * (n[1] + 1) + j) * (n[0] + 1) + i;
    let pos = |i: usize, j: usize, k: usize| lo + Vector3::new(i as f64 * h[0], j as f64 * h[1], k as f64 * h[2]);
    let mut vals = vec![0.0; (n[0] + 1) * (n[1] + 1) * (n[2] + 1)];
    for k in 0..=n[2] {
        for j in 0..=n[1] {
            for i in 0..=n[0] {
                let v = f(&pos(i, j, k));
                vals[idx(i, j, k)] = if v == 0.0 { f64::MIN_POSITIVE } else { v };
            }
        }
    }

    let mut mesh = Mesh::default();
    let mut edge_vertex: HashMap<(usize, usize), usize> = HashMap::new();
    for k in 0..n[2] {
        for j in 0..n[1] {
            for i in 0..n[0] {
                let corner: Vec<(usize, Vector3<f64>)> =
                    CUBE.iter().map(|c| (idx(i + c[0], j + c[1], k + c[2]), pos(i + c[0], j + c[1], k + c[2]))).collect();
                for tet in TETS {
                    let t: Vec<(usize, Vector3<f64>)> = tet.iter().map(|&c| corner[c]).collect();
                    let mut vertex = |a: usize, b: usize| -> usize {
                        let (ia, pa) = t[a];
                        let (ib, pb) = t[b];
                        let key = (ia.min(ib), ia.max(ib));
                        *edge_vertex.entry(key).or_insert_with(|| {
                            let (fa, fb) = (vals[ia], vals[ib]);
                            let s = fa / (fa - fb);
                            mesh.vertices.push(pa + (pb - pa) * s);
                            mesh.vertices.len() - 1
                        })
                    };
                    let inside: Vec<usize> = (0..4).filter(|&c| vals[t[c].0] < 0.0).collect();
                    let outside: Vec<usize> = (0..4).filter(|&c| vals[t[c].0] >= 0.0).collect();
                    match inside.len() {
                        1 | 3 => {
                            let (single, rest) = if inside.len() == 1 { (inside[0], &outside) } else { (outside[0], &inside) };
                            let a = vertex(single, rest[0]);
                            let b = vertex(single, rest[1]);
                            let c = vertex(single, rest[2]);
                            mesh.faces.push([a, b, c]);
                        }
                        2 => {
                            let (a0, a1, b0, b1) = (inside[0], inside[1], outside[0], outside[1]);
                            let p = vertex(a0, b0);
                            let q = vertex(a0, b1);
                            let r = vertex(a1, b1);
                            let s = vertex(a1, b0);
                            mesh.faces.push([p, q, r]);
                            mesh.faces.push([p, r, s]);
                        }
                        _ => {}
                    }
                }
            }
        }
    }
    mesh
}
