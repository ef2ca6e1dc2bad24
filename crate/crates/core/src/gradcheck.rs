//! Finite-difference verification of every analytic gradient in the crate.
//!
//! Shading derivatives are checked with the hit point and cell held fixed:
//! each sample of a pixel's 4x4x4 neighbourhood is perturbed by `+-step` and
//! the pixel is re-shaded from the same hit record, in quadruple precision.
//! Loss families use the same protocol in `f64`, differencing only the terms a
//! perturbed sample can change so the result is not drowned in the rounding of
//! a large sum.

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use f128::f128;

use crate::error::Result;
use crate::grid::{init_sphere, init_torus, SdfGrid};
use crate::real::Real;
use crate::loss::{
    eikonal_loss_masked, eikonal_term, geometry_loss_masked, geometry_term, narrow_band_mask, EikonalForm,
};
use crate::scene::{canonical_rig, Camera, Light, LightParams, Ray};
use crate::shade::tape::shade_pixel_taped;
use crate::shade::{render, shade_pixel, shading_cosine, PixelTape};
use crate::tracer::{HitRecord, TraceParams};
use crate::vec3::Vec3;

type LocalTerm = dyn Fn(&SdfGrid<f64>, usize, usize, usize) -> f64;

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckConfig {
    /// Hit pixels checked in total, split evenly across the test grids.
    pub n_pixels: usize,
    pub seed: u64,
    pub resolution: usize,
    pub image_res: usize,
    pub step: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Entries with both analytic and numeric magnitude below this are held
    /// to `abs_tol` instead of `rel_tol`.
    pub small_grad: f64,
    /// Pixels whose shading cosine is below this are skipped: the clamp
    /// `max(0, cos)` has a kink there.
    pub min_cosine: f64,
    /// Noise amplitude of the perturbed grid, in grid spacings.
    pub noise: f64,
    /// Samples per grid checked for the image and regularizer families.
    pub loss_samples: usize,
    /// Test-only: flip the sign of the analytic shading gradient.
    #[doc(hidden)]
    pub inject_sign_flip: bool,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            n_pixels: 1200,
            seed: 0,
            resolution: 32,
            image_res: 48,
            step: 1e-6,
            rel_tol: 1e-4,
            abs_tol: 1e-10,
            small_grad: 1e-8,
            min_cosine: 1e-3,
            noise: 0.3,
            loss_samples: 300,
            inject_sign_flip: false,
        }
    }
}

/// Error statistics of one gradient family.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FamilyReport {
    pub name: String,
    pub entries: usize,
    pub max_rel_err: f64,
    pub max_abs_err_small: f64,
    pub failures: usize,
}

impl FamilyReport {
    fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            ..Default::default()
        }
    }

    fn record(&mut self, analytic: f64, numeric: f64, cfg: &GradcheckConfig) {
        self.entries += 1;
        let scale = analytic.abs().max(numeric.abs());
        let diff = (analytic - numeric).abs();
        let ok = if scale > cfg.small_grad {
            let rel = diff / scale;
            self.max_rel_err = self.max_rel_err.max(rel);
            rel <= cfg.rel_tol
        } else {
            self.max_abs_err_small = self.max_abs_err_small.max(diff);
            diff <= cfg.abs_tol
        };
        if !ok {
            self.failures += 1;
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradcheckReport {
    pub pixels: usize,
    pub skipped_near_kink: usize,
    pub families: Vec<FamilyReport>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.families.iter().all(FamilyReport::passed)
    }
}

/// Named test grids: a sphere, a torus, and a noise-perturbed sphere.
pub fn test_grids(resolution: usize, noise: f64, seed: u64) -> Result<Vec<(&'static str, SdfGrid<f64>)>> {
    let origin = Vec3::splat(-0.5);
    let h = 1.0 / (resolution - 1) as f64;
    let sphere = init_sphere(resolution, Vec3::zero(), 0.3, origin, h)?;
    let torus = init_torus(resolution, Vec3::zero(), 0.3, 0.12, origin, h)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut noisy = init_sphere(resolution, Vec3::new(0.03, -0.02, 0.01), 0.32, origin, h)?;
    for v in noisy.values_mut() {
        *v += rng.gen_range(-noise..=noise) * h;
    }
    Ok(vec![("sphere", sphere), ("torus", torus), ("perturbed", noisy)])
}

struct Pixel {
    camera: usize,
    ray: Ray<f64>,
    hit: HitRecord<f64>,
}

/// Indices of the 4x4x4 sample block a hit can depend on.
fn neighbourhood(grid: &SdfGrid<f64>, hit: &HitRecord<f64>) -> Vec<usize> {
    let geo = grid.geometry();
    let n = geo.resolution() as isize;
    let mut out = Vec::with_capacity(64);
    for dk in -1..3isize {
        for dj in -1..3isize {
            for di in -1..3isize {
                let c = [hit.cell[0] as isize + di, hit.cell[1] as isize + dj, hit.cell[2] as isize + dk];
                if c.iter().all(|&x| x >= 0 && x < n) {
                    out.push(geo.index(c[0] as usize, c[1] as usize, c[2] as usize));
                }
            }
        }
    }
    out
}

/// Central difference of `f` in sample `idx`, restoring the grid afterwards.
fn central_difference(grid: &mut SdfGrid<f64>, idx: usize, step: f64, mut f: impl FnMut(&SdfGrid<f64>) -> f64) -> f64 {
    let orig = grid.values()[idx];
    grid.values_mut()[idx] = orig + step;
    let plus = f(grid);
    grid.values_mut()[idx] = orig - step;
    let minus = f(grid);
    grid.values_mut()[idx] = orig;
    (plus - minus) / (2.0 * step)
}

/// The fixed-cell pixel function evaluated in quadruple precision.
///
/// A step-1e-6 central difference in plain `f64` carries about 1e-10 of
/// rounding noise, which swamps entries below ~1e-6. The same function and
/// step evaluated with 113-bit significands leaves only truncation error.
struct WideShade<'a> {
    grid: &'a mut SdfGrid<f128>,
    hit: HitRecord<f128>,
    light: Light<f128>,
    ray: Ray<f128>,
}

fn wide(x: f64) -> f128 {
    <f128 as crate::real::Real>::lit(x)
}

fn widen(v: Vec3<f64>) -> Vec3<f128> {
    v.cast()
}

impl<'a> WideShade<'a> {
    fn new(grid: &'a mut SdfGrid<f128>, hit: &HitRecord<f64>, light: &Light<f64>, ray: &Ray<f64>) -> Self {
        Self {
            grid,
            hit: HitRecord {
                s: widen(hit.s),
                cell: hit.cell,
                t: wide(hit.t),
                steps: hit.steps,
                local_values: hit.local_values.map(f128::from),
            },
            light: Light {
                direction: widen(light.direction),
                intensity: wide(light.intensity),
                ambient: wide(light.ambient),
                albedo: wide(light.albedo),
            },
            // the f64 direction is used as is, not renormalized
            ray: Ray {
                origin: widen(ray.origin),
                direction: widen(ray.direction),
            },
        }
    }

    fn pixel(&self) -> f128 {
        shade_pixel(&self.hit, self.grid, &self.light, &self.ray).pixel_value
    }

    fn difference(&mut self, idx: usize, step: f64) -> f64 {
        let orig = self.grid.values()[idx];
        let step = wide(step);
        self.grid.values_mut()[idx] = orig + step;
        let plus = self.pixel();
        self.grid.values_mut()[idx] = orig - step;
        let minus = self.pixel();
        self.grid.values_mut()[idx] = orig;
        ((plus - minus) / (step * wide(2.0))).as_f64()
    }
}

fn analytic(tape: &PixelTape<f64>, idx: usize, cfg: &GradcheckConfig) -> f64 {
    let g = tape.grad_of(idx);
    if cfg.inject_sign_flip {
        -g
    } else {
        g
    }
}

/// Runs every gradient family over the test grids.
pub fn run(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut report = GradcheckReport::default();
    let mut shade = FamilyReport::new("shade");
    let mut taped = FamilyReport::new("shade-vs-tape");
    let mut image = FamilyReport::new("image-loss");
    let mut eik = FamilyReport::new("eikonal");
    let mut eik_sq = FamilyReport::new("eikonal-squared");
    let mut geo_f = FamilyReport::new("geometry");
    if cfg.n_pixels == 0 {
        warn!("gradient check asked for 0 pixels; nothing to verify");
        return Ok(report);
    }

    let grids = test_grids(cfg.resolution, cfg.noise, cfg.seed)?;
    let per_grid = cfg.n_pixels.div_ceil(grids.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let cams = canonical_rig(Vec3::zero(), 0.5, 2.0, 45f64.to_radians(), cfg.image_res)?;
    let lights: Vec<Light<f64>> = cams.iter().map(|c| Light::headlight(c, &LightParams::default())).collect();

    for (_, grid) in grids {
        let mut grid = grid;
        let trace = TraceParams::for_grid(&grid);

        // candidate pixels from every camera
        let mut pixels = Vec::new();
        let mut renders = Vec::with_capacity(cams.len());
        for (ci, cam) in cams.iter().enumerate() {
            let out = render(&grid, cam, &lights[ci], &trace, true);
            for (index, hit) in &out.hits {
                let ray = cam.generate_ray(index % cam.width(), index / cam.width())?;
                match shading_cosine(hit, &grid, &lights[ci], &ray) {
                    Some(c) if c >= cfg.min_cosine => pixels.push(Pixel {
                        camera: ci,
                        ray,
                        hit: *hit,
                    }),
                    _ => report.skipped_near_kink += 1,
                }
            }
            renders.push(out);
        }
        pixels.shuffle(&mut rng);
        pixels.truncate(per_grid);
        report.pixels += pixels.len();

        let mut wide = grid.cast::<f128>();
        for px in &pixels {
            let light = &lights[px.camera];
            let mut oracle = WideShade::new(&mut wide, &px.hit, light, &px.ray);
            let tape = shade_pixel(&px.hit, &grid, light, &px.ray);
            let reverse = shade_pixel_taped(&px.hit, &grid, light, &px.ray);
            for idx in neighbourhood(&grid, &px.hit) {
                let fd = oracle.difference(idx, cfg.step);
                let a = analytic(&tape, idx, cfg);
                shade.record(a, fd, cfg);
                taped.record(a, reverse.grad_of(idx), cfg);
            }
        }

        // image loss through one view, against a shifted target
        let ci = rng.gen_range(0..cams.len());
        check_image_loss(&mut grid, &cams[ci], &lights[ci], &renders[ci], &mut rng, cfg, &mut image);

        check_regularizers(&mut grid, &mut rng, cfg, &mut eik, &mut eik_sq, &mut geo_f)?;
    }
    report.families = vec![shade, taped, image, eik, eik_sq, geo_f];
    Ok(report)
}

fn check_image_loss(
    grid: &mut SdfGrid<f64>,
    cam: &Camera<f64>,
    light: &Light<f64>,
    rendered: &crate::shade::Rendered<f64>,
    rng: &mut ChaCha8Rng,
    cfg: &GradcheckConfig,
    family: &mut FamilyReport,
) {
    let target: Vec<f64> = rendered.image.data().iter().map(|v| v * 0.7 + 0.05).collect();
    let width = cam.width();
    let rays: Vec<Ray<f64>> = rendered
        .hits
        .iter()
        .map(|(i, _)| cam.generate_ray(i % width, i / width).expect("pixel in range"))
        .collect();
    // keep only pixels away from the kink so every perturbation is smooth
    let usable: Vec<usize> = (0..rendered.hits.len())
        .filter(|&n| shading_cosine(&rendered.hits[n].1, grid, light, &rays[n]).is_some_and(|c| c >= cfg.min_cosine))
        .collect();
    let mut grad = vec![0.0; grid.values().len()];
    let mut touching: std::collections::HashMap<usize, Vec<usize>> = Default::default();
    for &n in &usable {
        let (index, hit) = &rendered.hits[n];
        let tape = shade_pixel(hit, grid, light, &rays[n]);
        let dl = 2.0 * (tape.pixel_value - target[*index]);
        for (s, g) in tape.sample_indices.iter().zip(&tape.sample_grads) {
            grad[*s] += dl * g;
        }
        for s in neighbourhood(grid, hit) {
            touching.entry(s).or_default().push(n);
        }
    }
    let mut candidates: Vec<usize> = touching.keys().copied().collect();
    candidates.sort_unstable();
    candidates.shuffle(rng);
    candidates.truncate(cfg.loss_samples);
    for idx in candidates {
        let affected = &touching[&idx];
        let fd = central_difference(grid, idx, cfg.step, |g| {
            affected
                .iter()
                .map(|&n| {
                    let (index, hit) = &rendered.hits[n];
                    let r = shade_pixel(hit, g, light, &rays[n]).pixel_value - target[*index];
                    r * r
                })
                .sum()
        });
        let a = if cfg.inject_sign_flip { -grad[idx] } else { grad[idx] };
        family.record(a, fd, cfg);
    }
}

fn check_regularizers(
    grid: &mut SdfGrid<f64>,
    rng: &mut ChaCha8Rng,
    cfg: &GradcheckConfig,
    eik: &mut FamilyReport,
    eik_sq: &mut FamilyReport,
    geo_f: &mut FamilyReport,
) -> Result<()> {
    // the band is a fixed gate, not part of the differentiated function
    let mask = narrow_band_mask(grid, 1.6)?;
    let (_, g_norm) = eikonal_loss_masked(grid, EikonalForm::Norm, Some(&mask));
    let (_, g_sq) = eikonal_loss_masked(grid, EikonalForm::SquaredNorm, Some(&mask));
    let (_, g_geo) = geometry_loss_masked(grid, Some(&mask));
    let geo = *grid.geometry();
    let n = geo.resolution();

    let mut candidates: Vec<usize> = (0..geo.vertex_count())
        .filter(|&i| g_norm.values()[i] != 0.0 || g_geo.values()[i] != 0.0)
        .collect();
    candidates.shuffle(rng);
    candidates.truncate(cfg.loss_samples);
    for idx in candidates {
        let [i, j, k] = geo.coords(idx);
        // vertices whose terms read sample idx: itself and its six neighbours
        let mut affected = vec![[i, j, k]];
        for axis in 0..3 {
            let mut c = [i, j, k];
            if c[axis] > 0 {
                c[axis] -= 1;
                affected.push(c);
            }
            let mut c = [i, j, k];
            if c[axis] + 1 < n {
                c[axis] += 1;
                affected.push(c);
            }
        }
        affected.retain(|&[a, b, c]| geo.is_interior(a, b, c) && mask.contains(geo.index(a, b, c)));
        let local = |g: &SdfGrid<f64>, term: &LocalTerm| {
            affected.iter().map(|&[a, b, c]| term(g, a, b, c)).sum::<f64>()
        };
        let fd = central_difference(grid, idx, cfg.step, |g| {
            local(g, &|g, a, b, c| eikonal_term(g, a, b, c, EikonalForm::Norm))
        });
        eik.record(g_norm.values()[idx], fd, cfg);
        let fd = central_difference(grid, idx, cfg.step, |g| {
            local(g, &|g, a, b, c| eikonal_term(g, a, b, c, EikonalForm::SquaredNorm))
        });
        eik_sq.record(g_sq.values()[idx], fd, cfg);
        let fd = central_difference(grid, idx, cfg.step, |g| local(g, &geometry_term));
        geo_f.record(g_geo.values()[idx], fd, cfg);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_run_passes() {
        let cfg = GradcheckConfig {
            n_pixels: 60,
            resolution: 16,
            image_res: 24,
            loss_samples: 40,
            ..Default::default()
        };
        let r = run(&cfg).unwrap();
        assert!(r.pixels >= 60);
        assert!(r.passed(), "{r:#?}");
    }

    #[test]
    fn sign_flip_is_caught() {
        let cfg = GradcheckConfig {
            n_pixels: 10,
            resolution: 16,
            image_res: 24,
            loss_samples: 10,
            inject_sign_flip: true,
            ..Default::default()
        };
        let r = run(&cfg).unwrap();
        assert!(!r.passed());
        assert!(r.families.iter().find(|f| f.name == "shade").unwrap().failures > 0);
    }

    #[test]
    fn zero_pixels_is_vacuous() {
        let r = run(&GradcheckConfig {
            n_pixels: 0,
            ..Default::default()
        })
        .unwrap();
        assert!(r.passed());
        assert_eq!(r.pixels, 0);
    }
}
