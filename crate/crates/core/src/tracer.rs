//! First rendering stage: locate, per ray, the cell whose eight samples
//! define the surface crossing. Nothing here is differentiated.

use crate::error::{Error, Result};
use crate::grid::{CellIndex, GridGeometry, SdfGrid};
use crate::real::Real;
use crate::scene::Ray;
use crate::vec3::Vec3;

/// Stopping constants for sphere tracing.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceParams<T> {
    /// Hit threshold on the interpolated field.
    pub eps: T,
    /// Minimum advance per step.
    pub delta_min: T,
    pub max_steps: usize,
}

impl<T: Real> TraceParams<T> {
    pub const DEFAULT_MAX_STEPS: usize = 256;

    /// Thresholds scaled to the grid spacing `h`: `eps = 1e-4 h`, `delta_min = 1e-6 h`.
    pub fn for_spacing(h: T) -> Self {
        Self::scaled(h, T::lit(1e-4), T::lit(1e-6), Self::DEFAULT_MAX_STEPS)
    }

    pub fn scaled(h: T, eps_factor: T, delta_factor: T, max_steps: usize) -> Self {
        Self {
            eps: eps_factor * h,
            delta_min: delta_factor * h,
            max_steps,
        }
    }

    pub fn for_grid(grid: &SdfGrid<T>) -> Self {
        Self::for_spacing(grid.spacing())
    }
}

/// Where a traced ray stopped in front of the surface.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HitRecord<T> {
    /// Final position on the ray.
    pub s: Vec3<T>,
    /// Cell containing `s`.
    pub cell: CellIndex,
    /// Ray parameter of `s`.
    pub t: T,
    pub steps: usize,
    /// Grid values at the cell corners, x-fastest corner order.
    pub local_values: [T; 8],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Trace<T> {
    Hit(HitRecord<T>),
    Miss { steps: usize },
}

impl<T> Trace<T> {
    pub fn hit(&self) -> Option<&HitRecord<T>> {
        match self {
            Trace::Hit(h) => Some(h),
            Trace::Miss { .. } => None,
        }
    }

    pub fn is_hit(&self) -> bool {
        matches!(self, Trace::Hit(_))
    }

    pub fn steps(&self) -> usize {
        match self {
            Trace::Hit(h) => h.steps,
            Trace::Miss { steps } => *steps,
        }
    }
}

/// Parameter interval `[t_enter, t_exit]` (with `t_enter >= 0`) of the ray
/// inside the grid bounding box.
pub fn clip_to_box<T: Real>(geometry: &GridGeometry<T>, ray: &Ray<T>) -> Option<(T, T)> {
    let lo = geometry.bbox_min();
    let hi = geometry.bbox_max();
    let mut t0 = T::neg_infinity();
    let mut t1 = T::infinity();
    for a in 0..3 {
        let o = ray.origin[a];
        let d = ray.direction[a];
        if d == T::zero() {
            if o < lo[a] || o > hi[a] {
                return None;
            }
            continue;
        }
        let ta = (lo[a] - o) / d;
        let tb = (hi[a] - o) / d;
        let (near, far) = if ta <= tb { (ta, tb) } else { (tb, ta) };
        t0 = t0.max(near);
        t1 = t1.min(far);
    }
    let t0 = t0.max(T::zero());
    if t1 < t0 {
        None
    } else {
        Some((t0, t1))
    }
}

#[inline]
fn clamp_into<T: Real>(geometry: &GridGeometry<T>, p: Vec3<T>) -> Vec3<T> {
    let lo = geometry.bbox_min();
    let hi = geometry.bbox_max();
    Vec3::new(
        p.x.max(lo.x).min(hi.x),
        p.y.max(lo.y).min(hi.y),
        p.z.max(lo.z).min(hi.z),
    )
}

#[inline]
fn sample<T: Real>(grid: &SdfGrid<T>, p: Vec3<T>) -> (Vec3<T>, CellIndex, T) {
    let p = clamp_into(grid.geometry(), p);
    // clamped points are always inside the box
    let (cell, local) = grid.geometry().locate(p).expect("clamped point inside box");
    (p, cell, grid.trilinear_in_cell(cell, local))
}

/// Sphere traces `ray` through the trilinear field of `grid`.
pub fn sphere_trace<T: Real>(grid: &SdfGrid<T>, ray: &Ray<T>, params: &TraceParams<T>) -> Result<Trace<T>> {
    sphere_trace_visit(grid, ray, params, |_, _| {})
}

/// [`sphere_trace`] reporting every visited `(t, field value)` pair.
pub fn sphere_trace_visit<T: Real>(
    grid: &SdfGrid<T>,
    ray: &Ray<T>,
    params: &TraceParams<T>,
    mut visit: impl FnMut(T, T),
) -> Result<Trace<T>> {
    if !ray.has_unit_direction() {
        return Err(Error::invalid("ray direction is not unit length"));
    }
    if !(params.eps > T::zero()) {
        return Err(Error::invalid("hit threshold must be positive"));
    }
    let Some((t_enter, t_exit)) = clip_to_box(grid.geometry(), ray) else {
        return Ok(Trace::Miss { steps: 0 });
    };
    let mut t = t_enter;
    let mut steps = 0;
    while steps < params.max_steps {
        let (p, cell, f) = sample(grid, ray.at(t));
        steps += 1;
        visit(t, f);
        if f < params.eps {
            return Ok(Trace::Hit(HitRecord {
                s: p,
                cell,
                t,
                steps,
                local_values: grid.corner_values(cell),
            }));
        }
        t += f.max(params.delta_min);
        if t > t_exit {
            break;
        }
    }
    Ok(Trace::Miss { steps })
}

/// Brute-force reference: fixed increments along the ray, then bisection on
/// the first sign change of the interpolated field.
pub fn march_oracle<T: Real>(grid: &SdfGrid<T>, ray: &Ray<T>, step: T) -> Result<Trace<T>> {
    if !(step > T::zero()) {
        return Err(Error::invalid("oracle step must be positive"));
    }
    let Some((t_enter, t_exit)) = clip_to_box(grid.geometry(), ray) else {
        return Ok(Trace::Miss { steps: 0 });
    };
    let eval = |t: T| sample(grid, ray.at(t)).2;
    let finish = |t: T, steps: usize| {
        let (s, cell, _) = sample(grid, ray.at(t));
        Trace::Hit(HitRecord {
            s,
            cell,
            t,
            steps,
            local_values: grid.corner_values(cell),
        })
    };

    let mut steps = 1;
    let mut t = t_enter;
    if eval(t) <= T::zero() {
        return Ok(finish(t, steps));
    }
    while t < t_exit {
        let next = (t + step).min(t_exit);
        steps += 1;
        if eval(next) <= T::zero() {
            let (mut lo, mut hi) = (t, next);
            for _ in 0..60 {
                let mid = (lo + hi) * T::lit(0.5);
                if eval(mid) <= T::zero() {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Ok(finish((lo + hi) * T::lit(0.5), steps));
        }
        t = next;
    }
    Ok(Trace::Miss { steps })
}
