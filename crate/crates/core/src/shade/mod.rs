//! Second rendering stage: pixel color as a function of the SDF samples
//! around the hit, with its derivatives.
//!
//! The ray position `s` and the cell found by the tracer are held fixed. The
//! intersection estimate `p = s + f(s) v` depends on the eight corner
//! samples; the normal at `p` is the trilinear blend of central-difference
//! vertex gradients, so a pixel depends on at most a 4x4x4 block of samples.

pub mod tape;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{trilinear_weight_gradients, trilinear_weights, CellIndex, SdfGrid};
use crate::raster::Image;
use crate::real::Real;
use crate::scene::{Camera, Light, Ray};
use crate::tracer::{sphere_trace, HitRecord, Trace, TraceParams};
use crate::vec3::Vec3;

/// Gradients with a norm below this do not define a normal.
pub const DEGENERATE_NORMAL_NORM: f64 = 1e-12;

/// Pixel value with its sparse derivatives with respect to grid samples.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelTape<T> {
    pub pixel_value: T,
    pub sample_indices: Vec<usize>,
    pub sample_grads: Vec<T>,
}

impl<T: Real> PixelTape<T> {
    pub(crate) fn constant(pixel_value: T) -> Self {
        Self {
            pixel_value,
            sample_indices: Vec::new(),
            sample_grads: Vec::new(),
        }
    }

    /// Derivative with respect to the sample at flat index `index`.
    pub fn grad_of(&self, index: usize) -> T {
        self.sample_indices
            .iter()
            .position(|&i| i == index)
            .map_or(T::zero(), |k| self.sample_grads[k])
    }
}

/// Conservative intersection estimate `p = s + f(s) v`.
pub fn intersection_point<T: Real>(s: Vec3<T>, v: Vec3<T>, grid: &SdfGrid<T>) -> Result<Vec3<T>> {
    Ok(s + v * grid.trilinear(s)?)
}

/// Normalized trilinear blend of vertex gradients over the cell containing `p`.
pub fn surface_normal<T: Real>(grid: &SdfGrid<T>, p: Vec3<T>) -> Result<Vec3<T>> {
    let (cell, local) = grid.geometry().locate(p)?;
    let g = blended_gradient(grid, cell, local);
    let n = g.norm();
    if n < T::lit(DEGENERATE_NORMAL_NORM) {
        return Err(Error::DegenerateNormal(n.as_f64()));
    }
    Ok(g / n)
}

fn blended_gradient<T: Real>(grid: &SdfGrid<T>, cell: CellIndex, local: Vec3<T>) -> Vec3<T> {
    let w = trilinear_weights(local);
    let corners = corner_coords(cell);
    let mut g = Vec3::zero();
    for m in 0..8 {
        let [i, j, k] = corners[m];
        g += grid.vertex_gradient(i, j, k) * w[m];
    }
    g
}

#[inline]
fn corner_coords(cell: CellIndex) -> [[usize; 3]; 8] {
    let mut out = [[0; 3]; 8];
    for (m, c) in out.iter_mut().enumerate() {
        let (dx, dy, dz) = crate::grid::corner_offset(m);
        *c = [cell[0] + dx, cell[1] + dy, cell[2] + dz];
    }
    out
}

/// Dense 4x4x4 accumulator addressed by lattice coordinates around a cell.
struct Block<T> {
    base: [usize; 3],
    vals: [T; 64],
}

impl<T: Real> Block<T> {
    fn new(cell: CellIndex) -> Self {
        Self {
            base: cell,
            vals: [T::zero(); 64],
        }
    }

    #[inline]
    fn slot(&self, i: usize, j: usize, k: usize) -> usize {
        // lattice coordinate c maps to offset c + 1 - base, always in 0..4
        let o = |c: usize, b: usize| c + 1 - b;
        o(i, self.base[0]) + 4 * (o(j, self.base[1]) + 4 * o(k, self.base[2]))
    }

    #[inline]
    fn add(&mut self, ijk: [usize; 3], v: T) {
        let s = self.slot(ijk[0], ijk[1], ijk[2]);
        self.vals[s] += v;
    }

    fn into_tape(self, grid: &SdfGrid<T>, pixel_value: T) -> PixelTape<T> {
        let geo = grid.geometry();
        let mut tape = PixelTape::constant(pixel_value);
        for (s, v) in self.vals.iter().enumerate() {
            if *v == T::zero() {
                continue;
            }
            let (oi, oj, ok) = (s % 4, (s / 4) % 4, s / 16);
            let i = self.base[0] + oi - 1;
            let j = self.base[1] + oj - 1;
            let k = self.base[2] + ok - 1;
            tape.sample_indices.push(geo.index(i, j, k));
            tape.sample_grads.push(*v);
        }
        tape
    }
}

/// Diffuse term of a shaded hit, for callers that need to know whether the
/// clamp is active. `None` when the normal is degenerate.
pub fn shading_cosine<T: Real>(hit: &HitRecord<T>, grid: &SdfGrid<T>, light: &Light<T>, view: &Ray<T>) -> Option<T> {
    let geo = grid.geometry();
    let cell = hit.cell;
    let f_s = grid.trilinear_in_cell(cell, geo.local_in_cell(cell, hit.s));
    let p = hit.s + view.direction * f_s;
    let g = blended_gradient(grid, cell, geo.local_in_cell(cell, p));
    let n = g.norm();
    (n >= T::lit(DEGENERATE_NORMAL_NORM)).then(|| (g / n).dot(-light.direction))
}

/// Shades one hit and differentiates the pixel value with respect to every
/// sample it depends on. Grid values are read from `grid`, so re-shading a
/// perturbed grid with the same hit evaluates the fixed-cell function.
pub fn shade_pixel<T: Real>(hit: &HitRecord<T>, grid: &SdfGrid<T>, light: &Light<T>, view: &Ray<T>) -> PixelTape<T> {
    let geo = grid.geometry();
    let cell = hit.cell;
    let v = view.direction;
    let l = -light.direction;
    let h = geo.spacing();

    let w_s = trilinear_weights(geo.local_in_cell(cell, hit.s));
    let d = grid.corner_values(cell);
    let f_s = (0..8).fold(T::zero(), |a, m| a + w_s[m] * d[m]);
    let p = hit.s + v * f_s;

    let u_p = geo.local_in_cell(cell, p);
    let w_p = trilinear_weights(u_p);
    let dw_p = trilinear_weight_gradients(u_p);
    let corners = corner_coords(cell);
    let corner_grads = corners.map(|[i, j, k]| grid.vertex_gradient(i, j, k));

    let mut g = Vec3::zero();
    for m in 0..8 {
        g += corner_grads[m] * w_p[m];
    }
    let g_norm = g.norm();
    if g_norm < T::lit(DEGENERATE_NORMAL_NORM) {
        return PixelTape::constant(light.ambient);
    }
    let n = g / g_norm;
    let cos = n.dot(l);
    if cos <= T::zero() {
        return PixelTape::constant(light.ambient);
    }
    let q = light.albedo * light.intensity;
    let pixel_value = light.ambient + q * cos;

    // d pixel / d G
    let a = (l - n * cos) * (q / g_norm);

    let mut block = Block::new(cell);
    let mut dpix_dp = Vec3::zero();
    for m in 0..8 {
        let [i, j, k] = corners[m];
        // through the corner's central-difference gradient
        let st = geo.gradient_stencil(i, j, k);
        for axis in 0..3 {
            let scale = w_p[m] * a[axis];
            for (idx, coef) in st[axis] {
                block.add(geo.coords(idx), scale * coef);
            }
        }
        // through the interpolation weights at p
        dpix_dp += dw_p[m] * (a.dot(corner_grads[m]) / h);
    }
    // through p = s + f(s) v, with the weights at s held constant
    let sigma = dpix_dp.dot(v);
    for m in 0..8 {
        block.add(corners[m], sigma * w_s[m]);
    }
    block.into_tape(grid, pixel_value)
}

/// Output of [`render`].
#[derive(Clone, Debug)]
pub struct Rendered<T> {
    pub image: Image<T>,
    /// Row-major pixel index and stage-one record of every hit pixel.
    pub hits: Vec<(usize, HitRecord<T>)>,
    /// Row-major pixel index and derivatives of every hit pixel; empty unless
    /// gradients were requested.
    pub tapes: Vec<(usize, PixelTape<T>)>,
}

/// Pixel index, radiance, hit and tape of one traced pixel.
type PixelOut<T> = (usize, T, Option<HitRecord<T>>, Option<PixelTape<T>>);

/// Renders `grid` from `camera`. Misses get the background value 0.
pub fn render<T: Real>(
    grid: &SdfGrid<T>,
    camera: &Camera<T>,
    light: &Light<T>,
    params: &TraceParams<T>,
    with_gradients: bool,
) -> Rendered<T> {
    let width = camera.width();
    let rows: Vec<Vec<PixelOut<T>>> = (0..camera.height())
        .into_par_iter()
        .map(|py| {
            (0..width)
                .map(|px| {
                    let ray = camera.ray_unchecked(px, py);
                    let index = py * width + px;
                    // rays from the camera are unit length by construction
                    match sphere_trace(grid, &ray, params).expect("camera rays are unit length") {
                        Trace::Miss { .. } => (index, T::zero(), None, None),
                        Trace::Hit(hit) => {
                            let tape = shade_pixel(&hit, grid, light, &ray);
                            let value = tape.pixel_value;
                            (index, value, Some(hit), with_gradients.then_some(tape))
                        }
                    }
                })
                .collect()
        })
        .collect();

    let mut image = Image::zeros(width, camera.height());
    let mut hits = Vec::new();
    let mut tapes = Vec::new();
    for (index, value, hit, tape) in rows.into_iter().flatten() {
        image.data_mut()[index] = value;
        if let Some(hit) = hit {
            hits.push((index, hit));
        }
        if let Some(tape) = tape {
            tapes.push((index, tape));
        }
    }
    Rendered { image, hits, tapes }
}

/// Re-shades stored hits on a (possibly perturbed) grid without tracing.
pub fn reshade<T: Real>(
    grid: &SdfGrid<T>,
    camera: &Camera<T>,
    light: &Light<T>,
    hits: &[(usize, HitRecord<T>)],
) -> Image<T> {
    let width = camera.width();
    let mut image = Image::zeros(width, camera.height());
    for (index, hit) in hits {
        let ray = camera.ray_unchecked(index % width, index / width);
        image.data_mut()[*index] = shade_pixel(hit, grid, light, &ray).pixel_value;
    }
    image
}
