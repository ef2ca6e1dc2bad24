//! Marching cubes with a case table generated at first use.
//!
//! The table is built from a face rule rather than typed in: on every cube
//! face, crossing edges are paired so that each inside corner is cut off on
//! its own (an ambiguous face with two diagonal inside corners gets two
//! segments). Two cells sharing a face apply the same rule to the same four
//! values, so the extracted surface is closed. No asymptotic decider is used.
//! Segments are oriented with the inside on their left seen from outside the
//! cube, chained into loops, and each loop is fan-triangulated.

use std::collections::HashMap;
use std::sync::OnceLock;

use rayon::prelude::*;

use crate::grid::{corner_offset, SdfGrid};
use crate::real::Real;

use super::TriangleMesh;

/// The 12 cube edges as (lower corner, upper corner), corners numbered with
/// bit 0 = x, bit 1 = y, bit 2 = z.
pub const EDGES: [(usize, usize); 12] = [
    (0, 1),
    (2, 3),
    (4, 5),
    (6, 7),
    (0, 2),
    (1, 3),
    (4, 6),
    (5, 7),
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7),
];

const DEGENERATE_AREA: f64 = 1e-12;
/// Edge interpolation is kept this far from the corners.
const EDGE_T_CLAMP: f64 = 1e-3;

fn edge_between(a: usize, b: usize) -> usize {
    let (a, b) = if a < b { (a, b) } else { (b, a) };
    EDGES.iter().position(|&e| e == (a, b)).expect("corners are adjacent")
}

fn corner_pos(m: usize) -> [f64; 3] {
    let (x, y, z) = corner_offset(m);
    [x as f64, y as f64, z as f64]
}

fn edge_mid(e: usize) -> [f64; 3] {
    let (a, b) = EDGES[e];
    let (pa, pb) = (corner_pos(a), corner_pos(b));
    [(pa[0] + pb[0]) / 2.0, (pa[1] + pb[1]) / 2.0, (pa[2] + pb[2]) / 2.0]
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Triangles (as edge triples) for one inside-corner bitmask.
fn build_case(case: usize) -> Vec<[u8; 3]> {
    let inside = |m: usize| case >> m & 1 == 1;
    // oriented segments, start edge -> end edge
    let mut next: HashMap<usize, usize> = HashMap::new();
    for axis in 0..3 {
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        for side in 0..2 {
            let base = side << axis;
            let cyc = [base, base | 1 << u, base | 1 << u | 1 << v, base | 1 << v];
            let mut normal = [0.0; 3];
            normal[axis] = if side == 1 { 1.0 } else { -1.0 };
            let crossing: Vec<usize> = (0..4).filter(|&i| inside(cyc[i]) != inside(cyc[(i + 1) % 4])).collect();
            // (edge a, edge b, inside corner used for orientation)
            let mut segs = Vec::new();
            match crossing.len() {
                0 => {}
                2 => {
                    let ins = *cyc.iter().find(|&&c| inside(c)).unwrap();
                    let e = |i: usize| edge_between(cyc[i], cyc[(i + 1) % 4]);
                    segs.push((e(crossing[0]), e(crossing[1]), ins));
                }
                4 => {
                    for i in (0..4).filter(|&i| inside(cyc[i])) {
                        let prev = edge_between(cyc[(i + 3) % 4], cyc[i]);
                        let this = edge_between(cyc[i], cyc[(i + 1) % 4]);
                        segs.push((prev, this, cyc[i]));
                    }
                }
                _ => unreachable!("a square has an even number of sign changes"),
            }
            for (a, b, ins) in segs {
                let (pa, pb) = (edge_mid(a), edge_mid(b));
                let left = dot(cross(sub(pb, pa), sub(corner_pos(ins), pa)), normal) > 0.0;
                let (s, t) = if left { (a, b) } else { (b, a) };
                let prev = next.insert(s, t);
                debug_assert!(prev.is_none(), "case {case}: edge {s} starts two segments");
            }
        }
    }

    let mut tris = Vec::new();
    let mut starts: Vec<usize> = next.keys().copied().collect();
    starts.sort_unstable();
    let mut used = [false; 12];
    for s in starts {
        if used[s] {
            continue;
        }
        let mut lp = vec![s];
        used[s] = true;
        let mut cur = next[&s];
        while cur != s {
            used[cur] = true;
            lp.push(cur);
            cur = next[&cur];
        }
        // the loop runs with the inside on its left seen from outside the
        // cube, so its right-hand normal points inward; reverse it
        for i in 1..lp.len() - 1 {
            tris.push([lp[0] as u8, lp[i + 1] as u8, lp[i] as u8]);
        }
    }
    tris
}

/// Case table indexed by the inside-corner bitmask.
pub fn case_table() -> &'static [Vec<[u8; 3]>; 256] {
    static TABLE: OnceLock<[Vec<[u8; 3]>; 256]> = OnceLock::new();
    TABLE.get_or_init(|| std::array::from_fn(build_case))
}

/// Extracts the `iso` level set. Vertices are shared between adjacent cells;
/// triangles face towards increasing values. A grid with no crossing gives an
/// empty mesh.
pub fn marching_cubes<T: Real>(grid: &SdfGrid<T>, iso: T) -> TriangleMesh {
    let geo = grid.geometry();
    let n = geo.resolution();
    let table = case_table();
    let iso = iso.as_f64();
    let h = geo.spacing().as_f64();
    let origin = geo.origin().cast::<f64>();

    // per z-slab: triangles referencing global edge keys (lower vertex, axis)
    let slabs: Vec<Vec<[(usize, usize); 3]>> = (0..n - 1)
        .into_par_iter()
        .map(|k| {
            let mut out = Vec::new();
            for j in 0..n - 1 {
                for i in 0..n - 1 {
                    let vals = grid.corner_values([i, j, k]);
                    let mut case = 0;
                    for (m, v) in vals.iter().enumerate() {
                        if v.as_f64() < iso {
                            case |= 1 << m;
                        }
                    }
                    for tri in &table[case] {
                        out.push(tri.map(|e| {
                            let (a, b) = EDGES[e as usize];
                            let (dx, dy, dz) = corner_offset(a);
                            let axis = (a ^ b).trailing_zeros() as usize;
                            (geo.index(i + dx, j + dy, k + dz), axis)
                        }));
                    }
                }
            }
            out
        })
        .collect();

    let mut mesh = TriangleMesh::default();
    let mut ids: HashMap<(usize, usize), u32> = HashMap::new();
    let values = grid.values();
    for tri in slabs.into_iter().flatten() {
        let idx = tri.map(|key| {
            *ids.entry(key).or_insert_with(|| {
                let (lo, axis) = key;
                let [i, j, k] = geo.coords(lo);
                let hi = lo + [1, n, n * n][axis];
                let (va, vb) = (values[lo].as_f64(), values[hi].as_f64());
                let t = ((iso - va) / (vb - va)).clamp(EDGE_T_CLAMP, 1.0 - EDGE_T_CLAMP);
                let mut p = [
                    origin.x + i as f64 * h,
                    origin.y + j as f64 * h,
                    origin.z + k as f64 * h,
                ];
                p[axis] += t * h;
                mesh.vertices.push(p);
                (mesh.vertices.len() - 1) as u32
            })
        });
        mesh.triangles.push(idx);
    }
    mesh.remove_degenerate(DEGENERATE_AREA);
    mesh
}
