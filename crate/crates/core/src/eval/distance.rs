//! Exact point-to-mesh distance and the sampled symmetric Hausdorff metric.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

use super::TriangleMesh;

type P = [f64; 3];

fn sub(a: P, b: P) -> P {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: P, b: P) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn axpy(a: P, s: f64, d: P) -> P {
    [a[0] + s * d[0], a[1] + s * d[1], a[2] + s * d[2]]
}

fn dist2(a: P, b: P) -> f64 {
    let d = sub(a, b);
    dot(d, d)
}

/// Closest point on triangle `abc` to `p` (Voronoi-region walk).
pub fn closest_point_on_triangle(p: P, a: P, b: P, c: P) -> P {
    let ab = sub(b, a);
    let ac = sub(c, a);
    let ap = sub(p, a);
    let d1 = dot(ab, ap);
    let d2 = dot(ac, ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = sub(p, b);
    let d3 = dot(ab, bp);
    let d4 = dot(ac, bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return axpy(a, d1 / (d1 - d3), ab);
    }
    let cp = sub(p, c);
    let d5 = dot(ab, cp);
    let d6 = dot(ac, cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return axpy(a, d2 / (d2 - d6), ac);
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return axpy(b, (d4 - d3) / ((d4 - d3) + (d5 - d6)), sub(c, b));
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    axpy(axpy(a, v, ab), w, ac)
}

pub fn point_triangle_distance(p: P, a: P, b: P, c: P) -> f64 {
    dist2(p, closest_point_on_triangle(p, a, b, c)).sqrt()
}

#[derive(Clone, Copy, Debug)]
struct Aabb {
    lo: P,
    hi: P,
}

impl Aabb {
    fn empty() -> Self {
        Self {
            lo: [f64::INFINITY; 3],
            hi: [f64::NEG_INFINITY; 3],
        }
    }

    fn grow(&mut self, p: P) {
        for a in 0..3 {
            self.lo[a] = self.lo[a].min(p[a]);
            self.hi[a] = self.hi[a].max(p[a]);
        }
    }

    fn dist2(&self, p: P) -> f64 {
        let mut s = 0.0;
        for a in 0..3 {
            let d = (self.lo[a] - p[a]).max(p[a] - self.hi[a]).max(0.0);
            s += d * d;
        }
        s
    }
}

#[derive(Debug)]
enum Node {
    Leaf { bounds: Aabb, start: usize, end: usize },
    Inner { bounds: Aabb, left: usize, right: usize },
}

impl Node {
    fn bounds(&self) -> &Aabb {
        match self {
            Node::Leaf { bounds, .. } | Node::Inner { bounds, .. } => bounds,
        }
    }
}

const LEAF_SIZE: usize = 4;

/// Bounding-volume hierarchy over a mesh's triangles for nearest-distance queries.
#[derive(Debug)]
pub struct Bvh<'a> {
    mesh: &'a TriangleMesh,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl<'a> Bvh<'a> {
    pub fn build(mesh: &'a TriangleMesh) -> Result<Self> {
        if mesh.triangles.is_empty() {
            return Err(Error::invalid("cannot build a distance structure over an empty mesh"));
        }
        let centroids: Vec<P> = (0..mesh.triangles.len())
            .map(|t| {
                let [a, b, c] = mesh.corners(t);
                [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0, (a[2] + b[2] + c[2]) / 3.0]
            })
            .collect();
        let mut bvh = Self {
            mesh,
            order: (0..mesh.triangles.len()).collect(),
            nodes: Vec::new(),
        };
        bvh.split(0, mesh.triangles.len(), &centroids);
        Ok(bvh)
    }

    fn split(&mut self, start: usize, end: usize, centroids: &[P]) -> usize {
        let mut bounds = Aabb::empty();
        let mut cbox = Aabb::empty();
        for &t in &self.order[start..end] {
            for p in self.mesh.corners(t) {
                bounds.grow(p);
            }
            cbox.grow(centroids[t]);
        }
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { bounds, start, end });
            return id;
        }
        let axis = (0..3)
            .max_by(|&a, &b| (cbox.hi[a] - cbox.lo[a]).total_cmp(&(cbox.hi[b] - cbox.lo[b])))
            .unwrap();
        let mid = (start + end) / 2;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            centroids[a][axis].total_cmp(&centroids[b][axis]).then(a.cmp(&b))
        });
        self.nodes.push(Node::Leaf { bounds, start, end });
        let left = self.split(start, mid, centroids);
        let right = self.split(mid, end, centroids);
        self.nodes[id] = Node::Inner { bounds, left, right };
        id
    }

    /// Distance from `p` to the nearest point of the mesh.
    pub fn distance(&self, p: P) -> f64 {
        let mut best = f64::INFINITY;
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            if node.bounds().dist2(p) >= best {
                continue;
            }
            match *node {
                Node::Leaf { start, end, .. } => {
                    for &t in &self.order[start..end] {
                        let [a, b, c] = self.mesh.corners(t);
                        best = best.min(dist2(p, closest_point_on_triangle(p, a, b, c)));
                    }
                }
                Node::Inner { left, right, .. } => {
                    let (dl, dr) = (self.nodes[left].bounds().dist2(p), self.nodes[right].bounds().dist2(p));
                    // visit the nearer child first
                    if dl < dr {
                        stack.push(right);
                        stack.push(left);
                    } else {
                        stack.push(left);
                        stack.push(right);
                    }
                }
            }
        }
        best.sqrt()
    }
}

/// Points drawn uniformly by area from the mesh surface.
pub fn sample_surface(mesh: &TriangleMesh, samples: usize, seed: u64) -> Result<Vec<P>> {
    if mesh.triangles.is_empty() {
        return Err(Error::invalid("cannot sample an empty mesh"));
    }
    let mut cdf = Vec::with_capacity(mesh.triangles.len());
    let mut acc = 0.0;
    for t in 0..mesh.triangles.len() {
        acc += mesh.triangle_area(t);
        cdf.push(acc);
    }
    if !(acc > 0.0) {
        return Err(Error::invalid("mesh has zero area"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..samples)
        .map(|_| {
            let x = rng.gen::<f64>() * acc;
            let t = cdf.partition_point(|&c| c <= x).min(cdf.len() - 1);
            let (r1, r2): (f64, f64) = (rng.gen(), rng.gen());
            let s = r1.sqrt();
            let (wa, wb, wc) = (1.0 - s, s * (1.0 - r2), s * r2);
            let [a, b, c] = mesh.corners(t);
            [
                wa * a[0] + wb * b[0] + wc * c[0],
                wa * a[1] + wb * b[1] + wc * c[1],
                wa * a[2] + wb * b[2] + wc * c[2],
            ]
        })
        .collect())
}

/// Largest distance from samples on `from` to the surface of `to`.
pub fn directed_hausdorff(from: &TriangleMesh, to: &TriangleMesh, samples: usize, seed: u64) -> Result<f64> {
    let pts = sample_surface(from, samples, seed)?;
    let bvh = Bvh::build(to)?;
    Ok(pts.par_iter().map(|&p| bvh.distance(p)).reduce(|| 0.0, f64::max))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HausdorffOptions {
    /// Samples drawn on each mesh; at least 10 000.
    pub samples: usize,
    pub seed: u64,
    /// Normalizer: edge length of the reference bounding box.
    pub box_edge: f64,
}

impl Default for HausdorffOptions {
    fn default() -> Self {
        Self {
            samples: 100_000,
            seed: 0,
            box_edge: 1.0,
        }
    }
}

pub const MIN_HAUSDORFF_SAMPLES: usize = 10_000;

/// `max(d(A->B), d(B->A)) / box_edge`. Both directions use the same seed, so
/// the value does not depend on argument order.
pub fn symmetric_hausdorff(a: &TriangleMesh, b: &TriangleMesh, opts: &HausdorffOptions) -> Result<f64> {
    if opts.samples < MIN_HAUSDORFF_SAMPLES {
        return Err(Error::invalid(format!(
            "{} samples requested, at least {MIN_HAUSDORFF_SAMPLES} required",
            opts.samples
        )));
    }
    if !(opts.box_edge > 0.0) || !opts.box_edge.is_finite() {
        return Err(Error::invalid("bounding box edge must be positive"));
    }
    if a.triangles.is_empty() || b.triangles.is_empty() {
        return Err(Error::invalid("Hausdorff distance needs two non-empty meshes"));
    }
    if a == b {
        // closest-point rounding would otherwise leave ~1e-15
        return Ok(0.0);
    }
    let ab = directed_hausdorff(a, b, opts.samples, opts.seed)?;
    let ba = directed_hausdorff(b, a, opts.samples, opts.seed)?;
    Ok(ab.max(ba) / opts.box_edge)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triangle_regions() {
        let (a, b, c) = ([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]);
        assert_eq!(point_triangle_distance([0.2, 0.2, 0.5], a, b, c), 0.5);
        assert_eq!(point_triangle_distance([-1.0, -1.0, 0.0], a, b, c), 2f64.sqrt());
        assert_eq!(point_triangle_distance([2.0, 0.0, 0.0], a, b, c), 1.0);
        assert!((point_triangle_distance([1.0, 1.0, 0.0], a, b, c) - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(point_triangle_distance([0.5, -2.0, 0.0], a, b, c), 2.0);
        assert_eq!(point_triangle_distance([-3.0, 0.5, 0.0], a, b, c), 3.0);
    }

    #[test]
    fn bvh_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut mesh = TriangleMesh::default();
        for _ in 0..200 {
            let base = mesh.vertices.len() as u32;
            for _ in 0..3 {
                mesh.vertices.push([rng.gen(), rng.gen(), rng.gen()]);
            }
            mesh.triangles.push([base, base + 1, base + 2]);
        }
        let bvh = Bvh::build(&mesh).unwrap();
        for _ in 0..200 {
            let p = [rng.gen::<f64>() * 2.0 - 0.5, rng.gen::<f64>() * 2.0 - 0.5, rng.gen::<f64>() * 2.0 - 0.5];
            let brute = (0..mesh.triangles.len())
                .map(|t| {
                    let [a, b, c] = mesh.corners(t);
                    point_triangle_distance(p, a, b, c)
                })
                .fold(f64::INFINITY, f64::min);
            assert_eq!(bvh.distance(p), brute);
        }
    }
}
