//! Surface extraction and mesh comparison.

mod distance;
mod mc;

pub use distance::{
    closest_point_on_triangle, directed_hausdorff, point_triangle_distance, sample_surface, symmetric_hausdorff, Bvh,
    HausdorffOptions, MIN_HAUSDORFF_SAMPLES,
};
pub use mc::{case_table, marching_cubes, EDGES};

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Indexed triangle mesh in double precision.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[u32; 3]>,
}

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn corners(&self, t: usize) -> [[f64; 3]; 3] {
        self.triangles[t].map(|i| self.vertices[i as usize])
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.corners(t);
        let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
        let n = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
        0.5 * (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt()
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Unnormalized face normal `(b - a) x (c - a)`.
    pub fn face_normal(&self, t: usize) -> [f64; 3] {
        let [a, b, c] = self.corners(t);
        let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
        [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]]
    }

    /// Drops triangles with area at or below `min_area`, then unreferenced vertices.
    pub fn remove_degenerate(&mut self, min_area: f64) {
        let keep: Vec<bool> = (0..self.triangles.len()).map(|t| self.triangle_area(t) > min_area).collect();
        let mut k = keep.iter();
        self.triangles.retain(|_| *k.next().unwrap());
        self.compact();
    }

    fn compact(&mut self) {
        let mut remap = vec![u32::MAX; self.vertices.len()];
        let mut verts = Vec::with_capacity(self.vertices.len());
        for tri in &mut self.triangles {
            for i in tri.iter_mut() {
                let r = &mut remap[*i as usize];
                if *r == u32::MAX {
                    *r = verts.len() as u32;
                    verts.push(self.vertices[*i as usize]);
                }
                *i = *r;
            }
        }
        self.vertices = verts;
    }

    /// Undirected edges with the number of triangles using each.
    pub fn edge_counts(&self) -> HashMap<(u32, u32), usize> {
        let mut m = HashMap::new();
        for t in &self.triangles {
            for e in 0..3 {
                let (a, b) = (t[e], t[(e + 1) % 3]);
                *m.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        m
    }

    /// `V - E + F`.
    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edge_counts().len() as i64 + self.triangles.len() as i64
    }

    /// Every edge is shared by exactly two triangles traversing it in opposite directions.
    pub fn is_closed_and_oriented(&self) -> bool {
        let mut directed = HashMap::new();
        for t in &self.triangles {
            for e in 0..3 {
                *directed.entry((t[e], t[(e + 1) % 3])).or_insert(0usize) += 1;
            }
        }
        directed.iter().all(|(&(a, b), &c)| c == 1 && directed.get(&(b, a)) == Some(&1))
    }

    pub fn bounds(&self) -> Option<([f64; 3], [f64; 3])> {
        let first = *self.vertices.first()?;
        let (mut lo, mut hi) = (first, first);
        for v in &self.vertices {
            for a in 0..3 {
                lo[a] = lo[a].min(v[a]);
                hi[a] = hi[a].max(v[a]);
            }
        }
        Some((lo, hi))
    }

    /// Applies `p -> scale * p + offset` to every vertex.
    pub fn transformed(&self, scale: f64, offset: [f64; 3]) -> Self {
        Self {
            vertices: self
                .vertices
                .iter()
                .map(|v| [scale * v[0] + offset[0], scale * v[1] + offset[1], scale * v[2] + offset[2]])
                .collect(),
            triangles: self.triangles.clone(),
        }
    }

    pub fn to_obj(&self) -> String {
        let mut s = String::with_capacity(40 * (self.vertices.len() + self.triangles.len()));
        for v in &self.vertices {
            let _ = writeln!(s, "v {:?} {:?} {:?}", v[0], v[1], v[2]);
        }
        for t in &self.triangles {
            let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
        }
        s
    }

    pub fn write_obj(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_obj()).map_err(|e| Error::io(path, e))
    }

    /// Reads `v` and `f` records; polygons are fan-triangulated, negative
    /// indices count from the end, and other records are ignored.
    pub fn from_obj(text: &str, path: &Path) -> Result<Self> {
        let bad = |line: usize, reason: String| Error::format("OBJ mesh", path, format!("line {line}: {reason}"));
        let mut mesh = Self::default();
        for (n, line) in text.lines().enumerate() {
            let ln = n + 1;
            let mut tok = line.split_whitespace();
            match tok.next() {
                Some("v") => {
                    let xs = tok
                        .take(3)
                        .map(|t| t.parse::<f64>().map_err(|e| bad(ln, format!("'{t}': {e}"))))
                        .collect::<Result<Vec<_>>>()?;
                    if xs.len() != 3 || xs.iter().any(|x| !x.is_finite()) {
                        return Err(bad(ln, "vertex needs three finite coordinates".into()));
                    }
                    mesh.vertices.push([xs[0], xs[1], xs[2]]);
                }
                Some("f") => {
                    let count = mesh.vertices.len() as i64;
                    let idx = tok
                        .map(|t| {
                            let first = t.split('/').next().unwrap_or("");
                            let i: i64 = first.parse().map_err(|e| bad(ln, format!("'{t}': {e}")))?;
                            let i = if i < 0 { count + i } else { i - 1 };
                            if i < 0 || i >= count {
                                return Err(bad(ln, format!("vertex index {t} out of range")));
                            }
                            Ok(i as u32)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    if idx.len() < 3 {
                        return Err(bad(ln, "face needs at least three vertices".into()));
                    }
                    for w in 1..idx.len() - 1 {
                        mesh.triangles.push([idx[0], idx[w], idx[w + 1]]);
                    }
                }
                _ => {}
            }
        }
        Ok(mesh)
    }

    pub fn read_obj(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_obj(&text, path)
    }
}
