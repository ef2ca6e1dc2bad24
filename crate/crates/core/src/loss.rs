//! Objectives over rendered images and over the grid itself, each with a
//! grid-shaped gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GradientBuffer, SdfGrid};
use crate::raster::Image;
use crate::real::Real;
use crate::shade::{PixelTape, Rendered};
use crate::vec3::Vec3;

/// Per-vertex penalty on the gradient magnitude.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EikonalForm {
    /// `(|g| - 1)^2`
    #[default]
    Norm,
    /// `(1 - |g|^2)^2`
    SquaredNorm,
}

/// Regularizer weights and the narrow band that gates them.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights<T> {
    pub lambda_reg: T,
    pub lambda_geo: T,
    /// Band half-width in units of the grid spacing.
    pub mu: T,
    /// When false, every interior vertex contributes.
    pub use_mask: bool,
    pub eikonal_form: EikonalForm,
}

impl<T: Real> Default for LossWeights<T> {
    fn default() -> Self {
        Self {
            lambda_reg: T::lit(0.1),
            lambda_geo: T::lit(1e-5),
            mu: T::lit(1.6),
            use_mask: true,
            eikonal_form: EikonalForm::Norm,
        }
    }
}

/// Sum of squared pixel differences and its derivative per rendered pixel.
pub fn image_loss<T: Real>(rendered: &Image<T>, target: &Image<T>) -> Result<(T, Vec<T>)> {
    if !rendered.same_shape(target) {
        return Err(Error::invalid(format!(
            "image size mismatch: {}x{} vs {}x{}",
            rendered.width(),
            rendered.height(),
            target.width(),
            target.height()
        )));
    }
    let two = T::lit(2.0);
    let mut loss = T::zero();
    let grad = rendered
        .data()
        .iter()
        .zip(target.data())
        .map(|(&r, &t)| {
            let d = r - t;
            loss += d * d;
            two * d
        })
        .collect();
    Ok((loss, grad))
}

/// Chains per-pixel loss derivatives through the shading tapes.
pub fn backprop_image<T: Real>(tapes: &[(usize, PixelTape<T>)], dl_dpixel: &[T], out: &mut GradientBuffer<T>) {
    for (pixel, tape) in tapes {
        let g = dl_dpixel[*pixel];
        if g == T::zero() {
            continue;
        }
        for (&idx, &dg) in tape.sample_indices.iter().zip(&tape.sample_grads) {
            out.add(idx, g * dg);
        }
    }
}

/// Vertices within `mu * h` of the zero level set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NarrowBand {
    resolution: usize,
    inside: Vec<bool>,
}

impl NarrowBand {
    pub fn everywhere(resolution: usize) -> Self {
        Self {
            resolution,
            inside: vec![true; resolution * resolution * resolution],
        }
    }

    #[inline]
    pub fn contains(&self, index: usize) -> bool {
        self.inside[index]
    }

    pub fn count(&self) -> usize {
        self.inside.iter().filter(|b| **b).count()
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.inside.iter().zip(&other.inside).all(|(a, b)| !*a || *b)
    }
}

pub fn narrow_band_mask<T: Real>(grid: &SdfGrid<T>, mu: T) -> Result<NarrowBand> {
    if !(mu > T::zero()) {
        return Err(Error::invalid(format!("narrow band width {mu} must be positive")));
    }
    let limit = mu * grid.spacing();
    Ok(NarrowBand {
        resolution: grid.resolution(),
        inside: grid.values().iter().map(|d| d.abs() <= limit).collect(),
    })
}

fn interior_vertices<'a, T: Real>(
    grid: &'a SdfGrid<T>,
    mask: Option<&'a NarrowBand>,
) -> impl Iterator<Item = (usize, usize, usize, usize)> + 'a {
    let n = grid.resolution();
    let geo = *grid.geometry();
    (1..n.saturating_sub(1)).flat_map(move |k| {
        (1..n - 1).flat_map(move |j| {
            (1..n - 1).filter_map(move |i| {
                let idx = geo.index(i, j, k);
                mask.is_none_or(|m| m.contains(idx)).then_some((i, j, k, idx))
            })
        })
    })
}

/// Eikonal penalty of one interior vertex.
pub fn eikonal_term<T: Real>(grid: &SdfGrid<T>, i: usize, j: usize, k: usize, form: EikonalForm) -> T {
    let norm = grid.vertex_gradient(i, j, k).norm();
    let r = match form {
        EikonalForm::Norm => norm - T::one(),
        EikonalForm::SquaredNorm => T::one() - norm * norm,
    };
    r * r
}

/// Squared Laplacian of one interior vertex.
pub fn geometry_term<T: Real>(grid: &SdfGrid<T>, i: usize, j: usize, k: usize) -> T {
    let lap = grid.laplacian_unchecked(i, j, k);
    lap * lap
}

/// Eikonal penalty summed over interior vertices (optionally band-limited).
pub fn eikonal_loss_masked<T: Real>(
    grid: &SdfGrid<T>,
    form: EikonalForm,
    mask: Option<&NarrowBand>,
) -> (T, GradientBuffer<T>) {
    let geo = grid.geometry();
    let mut grad = GradientBuffer::like(grid);
    let mut loss = T::zero();
    let two = T::lit(2.0);
    for (i, j, k, _) in interior_vertices(grid, mask) {
        let g = grid.vertex_gradient(i, j, k);
        let norm = g.norm();
        let dterm: Vec3<T> = match form {
            EikonalForm::Norm => {
                let r = norm - T::one();
                loss += r * r;
                if norm > T::zero() {
                    g * (two * r / norm)
                } else {
                    Vec3::zero()
                }
            }
            EikonalForm::SquaredNorm => {
                let r = T::one() - norm * norm;
                loss += r * r;
                g * (T::lit(-4.0) * r)
            }
        };
        let st = geo.gradient_stencil(i, j, k);
        for axis in 0..3 {
            for (idx, coef) in st[axis] {
                grad.add(idx, dterm[axis] * coef);
            }
        }
    }
    (loss, grad)
}

pub fn eikonal_loss<T: Real>(grid: &SdfGrid<T>, form: EikonalForm) -> (T, GradientBuffer<T>) {
    eikonal_loss_masked(grid, form, None)
}

/// Squared seven-point Laplacian summed over interior vertices.
pub fn geometry_loss_masked<T: Real>(grid: &SdfGrid<T>, mask: Option<&NarrowBand>) -> (T, GradientBuffer<T>) {
    let geo = grid.geometry();
    let h2 = grid.spacing() * grid.spacing();
    let mut grad = GradientBuffer::like(grid);
    let mut loss = T::zero();
    for (i, j, k, idx) in interior_vertices(grid, mask) {
        let lap = grid.laplacian_unchecked(i, j, k);
        loss += lap * lap;
        let c = T::lit(2.0) * lap / h2;
        for nb in [
            geo.index(i + 1, j, k),
            geo.index(i - 1, j, k),
            geo.index(i, j + 1, k),
            geo.index(i, j - 1, k),
            geo.index(i, j, k + 1),
            geo.index(i, j, k - 1),
        ] {
            grad.add(nb, c);
        }
        grad.add(idx, T::lit(-6.0) * c);
    }
    (loss, grad)
}

pub fn geometry_loss<T: Real>(grid: &SdfGrid<T>) -> (T, GradientBuffer<T>) {
    geometry_loss_masked(grid, None)
}

/// Values of a loss evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct LossReport<T> {
    pub image_loss: T,
    /// Band-limited eikonal term, unweighted.
    pub reg_loss: T,
    /// Band-limited Laplacian term, unweighted.
    pub geo_loss: T,
    pub total: T,
    pub per_view_image_loss: Vec<T>,
}

/// Weighted, band-limited regularizers and their combined gradient.
pub fn regularizers<T: Real>(grid: &SdfGrid<T>, weights: &LossWeights<T>) -> Result<(T, T, GradientBuffer<T>)> {
    let mut grad = GradientBuffer::like(grid);
    if weights.lambda_reg == T::zero() && weights.lambda_geo == T::zero() {
        return Ok((T::zero(), T::zero(), grad));
    }
    let mask = if weights.use_mask {
        Some(narrow_band_mask(grid, weights.mu)?)
    } else {
        None
    };
    let (reg, reg_grad) = eikonal_loss_masked(grid, weights.eikonal_form, mask.as_ref());
    let (geo, geo_grad) = geometry_loss_masked(grid, mask.as_ref());
    grad.accumulate(&reg_grad, weights.lambda_reg);
    grad.accumulate(&geo_grad, weights.lambda_geo);
    Ok((reg, geo, grad))
}

/// Image term summed over views plus weighted regularizers. Each rendered
/// view must carry its shading tapes.
pub fn total_loss<T: Real>(
    grid: &SdfGrid<T>,
    rendered_views: &[Rendered<T>],
    target_views: &[Image<T>],
    weights: &LossWeights<T>,
) -> Result<(LossReport<T>, GradientBuffer<T>)> {
    if rendered_views.len() != target_views.len() {
        return Err(Error::invalid(format!(
            "{} rendered views but {} targets",
            rendered_views.len(),
            target_views.len()
        )));
    }
    let mut grad = GradientBuffer::like(grid);
    let mut per_view = Vec::with_capacity(rendered_views.len());
    for (view, target) in rendered_views.iter().zip(target_views) {
        let (l, dl) = image_loss(&view.image, target)?;
        backprop_image(&view.tapes, &dl, &mut grad);
        per_view.push(l);
    }
    let image = per_view.iter().fold(T::zero(), |a, &b| a + b);
    let (reg, geo, reg_grad) = regularizers(grid, weights)?;
    grad.accumulate(&reg_grad, T::one());
    Ok((
        LossReport {
            image_loss: image,
            reg_loss: reg,
            geo_loss: geo,
            total: image + weights.lambda_reg * reg + weights.lambda_geo * geo,
            per_view_image_loss: per_view,
        },
        grad,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridGeometry;
    use approx::assert_relative_eq;

    fn geo(n: usize, extent: f64) -> GridGeometry<f64> {
        GridGeometry::from_extent(n, Vec3::splat(0.0), extent).unwrap()
    }

    #[test]
    fn image_loss_arithmetic() {
        let r = Image::from_data(1, 1, vec![0.5]).unwrap();
        let t = Image::from_data(1, 1, vec![0.25]).unwrap();
        let (l, g) = image_loss(&r, &t).unwrap();
        assert_eq!(l, 0.0625);
        assert_eq!(g, vec![0.5]);
        assert_eq!(image_loss(&r, &r).unwrap().0, 0.0);
        let big = Image::zeros(2, 1);
        assert!(image_loss(&r, &big).is_err());
    }

    #[test]
    fn eikonal_reference_values() {
        let planar = SdfGrid::from_fn(geo(6, 1.0), |p| p.x);
        assert!(eikonal_loss(&planar, EikonalForm::Norm).0.abs() < 1e-20);
        let constant = SdfGrid::constant(geo(6, 1.0), 0.3);
        let (l, g) = eikonal_loss(&constant, EikonalForm::Norm);
        assert_eq!(l, 64.0);
        assert!(g.values().iter().all(|v| v.is_finite()));
        let doubled = SdfGrid::from_fn(geo(5, 1.0), |p| 2.0 * p.y);
        assert_relative_eq!(eikonal_loss(&doubled, EikonalForm::Norm).0, 27.0, max_relative = 1e-12);
        // (1 - 4)^2 = 9 per vertex for the squared form
        assert_relative_eq!(eikonal_loss(&doubled, EikonalForm::SquaredNorm).0, 243.0, max_relative = 1e-12);
    }

    #[test]
    fn geometry_reference_values() {
        let affine = SdfGrid::from_fn(geo(6, 1.0), |p| 0.3 * p.x - p.y + 2.0 * p.z + 0.1);
        assert!(geometry_loss(&affine).0 < 1e-18);
        // h = 1, f = x^2 has Laplacian 2 everywhere
        let quad = SdfGrid::from_fn(geo(5, 4.0), |p| p.x * p.x);
        assert_relative_eq!(geometry_loss(&quad).0, 4.0 * 27.0, max_relative = 1e-12);
    }

    #[test]
    fn mask_examples() {
        let g = SdfGrid::from_fn(geo(9, 1.0), |p| (p - Vec3::splat(0.5)).norm() - 0.25);
        let h = g.spacing();
        let m = narrow_band_mask(&g, 1.6).unwrap();
        for (idx, d) in g.values().iter().enumerate() {
            assert_eq!(m.contains(idx), d.abs() <= 1.6 * h);
        }
        let wide = narrow_band_mask(&g, 3.0).unwrap();
        assert!(m.is_subset_of(&wide));
        let far = SdfGrid::constant(geo(4, 1.0), 5.0);
        assert_eq!(narrow_band_mask(&far, 1.6).unwrap().count(), 0);
        assert!(narrow_band_mask(&far, 0.0).is_err());
    }

    #[test]
    fn masked_vertices_contribute_nothing() {
        let g = SdfGrid::constant(geo(6, 1.0), 5.0);
        let m = narrow_band_mask(&g, 1.6).unwrap();
        let (l, grad) = eikonal_loss_masked(&g, EikonalForm::Norm, Some(&m));
        assert_eq!(l, 0.0);
        assert_eq!(grad.max_abs(), 0.0);
    }

    #[test]
    fn total_loss_validates_view_count() {
        let g = SdfGrid::constant(geo(4, 1.0), 1.0);
        let t = vec![Image::zeros(2, 2)];
        assert!(total_loss(&g, &[], &t, &LossWeights::default()).is_err());
    }
}
