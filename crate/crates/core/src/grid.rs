//! Discrete signed distance field on a uniform cubic lattice.
//!
//! Values are stored per vertex in x-fastest order (`i + N * (j + N * k)`).
//! Cells are the `N - 1` intervals per axis; the continuous field is the
//! trilinear blend of the eight corners of the containing cell.

use crate::error::{Error, Result};
use crate::real::Real;
use crate::vec3::Vec3;

/// Lattice coordinates of a cell (its minimum corner vertex).
pub type CellIndex = [usize; 3];

/// Relative slack, in cells, tolerated when locating points on the box faces.
const LOCATE_SLACK: f64 = 1e-9;

/// Placement of a lattice in world space.
///
/// The side length `extent` is kept alongside the spacing so that resampling
/// to another resolution preserves the bounding box bit for bit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridGeometry<T> {
    resolution: usize,
    origin: Vec3<T>,
    extent: T,
    spacing: T,
}

impl<T: Real> GridGeometry<T> {
    pub fn new(resolution: usize, origin: Vec3<T>, spacing: T) -> Result<Self> {
        if resolution < 2 {
            return Err(Error::invalid(format!("grid resolution {resolution} < 2")));
        }
        if !(spacing > T::zero()) || !spacing.is_finite() {
            return Err(Error::invalid(format!("grid spacing {spacing} must be positive")));
        }
        if !origin.is_finite() {
            return Err(Error::invalid("grid origin must be finite"));
        }
        Ok(Self {
            resolution,
            origin,
            extent: spacing * T::from_usize_lossy(resolution - 1),
            spacing,
        })
    }

    /// Cube `[origin, origin + extent]` sampled with `resolution` vertices per axis.
    pub fn from_extent(resolution: usize, origin: Vec3<T>, extent: T) -> Result<Self> {
        if resolution < 2 {
            return Err(Error::invalid(format!("grid resolution {resolution} < 2")));
        }
        if !(extent > T::zero()) || !extent.is_finite() {
            return Err(Error::invalid(format!("grid extent {extent} must be positive")));
        }
        Ok(Self {
            resolution,
            origin,
            extent,
            spacing: extent / T::from_usize_lossy(resolution - 1),
        })
    }

    /// Same bounding box, different vertex count.
    pub fn with_resolution(&self, resolution: usize) -> Result<Self> {
        Self::from_extent(resolution, self.origin, self.extent)
    }

    #[inline]
    pub fn resolution(&self) -> usize {
        self.resolution
    }

    #[inline]
    pub fn origin(&self) -> Vec3<T> {
        self.origin
    }

    #[inline]
    pub fn spacing(&self) -> T {
        self.spacing
    }

    #[inline]
    pub fn extent(&self) -> T {
        self.extent
    }

    #[inline]
    pub fn bbox_min(&self) -> Vec3<T> {
        self.origin
    }

    #[inline]
    pub fn bbox_max(&self) -> Vec3<T> {
        self.origin + Vec3::splat(self.extent)
    }

    #[inline]
    pub fn center(&self) -> Vec3<T> {
        self.origin + Vec3::splat(self.extent * T::lit(0.5))
    }

    #[inline]
    pub fn vertex_count(&self) -> usize {
        self.resolution * self.resolution * self.resolution
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.resolution * (j + self.resolution * k)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let n = self.resolution;
        [index % n, (index / n) % n, index / (n * n)]
    }

    #[inline]
    pub fn vertex_position(&self, i: usize, j: usize, k: usize) -> Vec3<T> {
        let h = self.spacing;
        self.origin
            + Vec3::new(
                T::from_usize_lossy(i) * h,
                T::from_usize_lossy(j) * h,
                T::from_usize_lossy(k) * h,
            )
    }

    #[inline]
    pub fn contains(&self, p: Vec3<T>) -> bool {
        let lo = self.bbox_min();
        let hi = self.bbox_max();
        (0..3).all(|a| p[a] >= lo[a] && p[a] <= hi[a])
    }

    #[inline]
    pub fn is_interior(&self, i: usize, j: usize, k: usize) -> bool {
        let n = self.resolution;
        (1..n - 1).contains(&i) && (1..n - 1).contains(&j) && (1..n - 1).contains(&k)
    }

    /// Cell containing `p` and the local coordinates of `p` in `[0, 1]^3`.
    pub fn locate(&self, p: Vec3<T>) -> Result<(CellIndex, Vec3<T>)> {
        let n1 = T::from_usize_lossy(self.resolution - 1);
        let slack = T::lit(LOCATE_SLACK);
        let mut cell = [0usize; 3];
        let mut local = Vec3::zero();
        for a in 0..3 {
            let r = (p[a] - self.origin[a]) / self.spacing;
            if !(r >= -slack && r <= n1 + slack) {
                return Err(Error::OutOfDomain {
                    x: p.x.as_f64(),
                    y: p.y.as_f64(),
                    z: p.z.as_f64(),
                });
            }
            let r = r.max(T::zero()).min(n1);
            let c = r.floor().to_usize().unwrap_or(0).min(self.resolution - 2);
            cell[a] = c;
            local[a] = r - T::from_usize_lossy(c);
        }
        Ok((cell, local))
    }

    /// Local coordinates of `p` relative to a given cell; may fall outside
    /// `[0, 1]` when `p` is not inside that cell.
    #[inline]
    pub fn local_in_cell(&self, cell: CellIndex, p: Vec3<T>) -> Vec3<T> {
        let corner = self.vertex_position(cell[0], cell[1], cell[2]);
        (p - corner) / self.spacing
    }

    /// Flat indices of the eight corners of `cell`, x-fastest corner order.
    #[inline]
    pub fn cell_corners(&self, cell: CellIndex) -> [usize; 8] {
        let mut out = [0usize; 8];
        for (m, slot) in out.iter_mut().enumerate() {
            let (dx, dy, dz) = corner_offset(m);
            *slot = self.index(cell[0] + dx, cell[1] + dy, cell[2] + dz);
        }
        out
    }

    /// Two-point stencil of the derivative along one axis at lattice
    /// coordinate `c`: central in the interior, one-sided on the boundary.
    /// Returns `(coordinate, coefficient)` pairs.
    #[inline]
    pub fn derivative_stencil(&self, c: usize) -> [(usize, T); 2] {
        let n = self.resolution;
        let inv_h = T::one() / self.spacing;
        if c == 0 {
            [(1, inv_h), (0, -inv_h)]
        } else if c == n - 1 {
            [(n - 1, inv_h), (n - 2, -inv_h)]
        } else {
            let half = inv_h * T::lit(0.5);
            [(c + 1, half), (c - 1, -half)]
        }
    }

    /// Flat-index stencils of the three gradient components at a vertex.
    #[inline]
    pub fn gradient_stencil(&self, i: usize, j: usize, k: usize) -> [[(usize, T); 2]; 3] {
        let sx = self.derivative_stencil(i);
        let sy = self.derivative_stencil(j);
        let sz = self.derivative_stencil(k);
        [
            [(self.index(sx[0].0, j, k), sx[0].1), (self.index(sx[1].0, j, k), sx[1].1)],
            [(self.index(i, sy[0].0, k), sy[0].1), (self.index(i, sy[1].0, k), sy[1].1)],
            [(self.index(i, j, sz[0].0), sz[0].1), (self.index(i, j, sz[1].0), sz[1].1)],
        ]
    }
}

/// Offset of corner `m` (0..8) within a cell: bit 0 is x, bit 1 is y, bit 2 is z.
#[inline]
pub const fn corner_offset(m: usize) -> (usize, usize, usize) {
    (m & 1, (m >> 1) & 1, (m >> 2) & 1)
}

/// Trilinear weights of the eight cell corners at local coordinates `u`.
#[inline]
pub fn trilinear_weights<T: Real>(u: Vec3<T>) -> [T; 8] {
    let one = T::one();
    let wx = [one - u.x, u.x];
    let wy = [one - u.y, u.y];
    let wz = [one - u.z, u.z];
    let mut w = [T::zero(); 8];
    for (m, slot) in w.iter_mut().enumerate() {
        let (dx, dy, dz) = corner_offset(m);
        *slot = wx[dx] * wy[dy] * wz[dz];
    }
    w
}

/// Derivatives of the trilinear weights with respect to the local coordinates.
#[inline]
pub fn trilinear_weight_gradients<T: Real>(u: Vec3<T>) -> [Vec3<T>; 8] {
    let one = T::one();
    let wx = [one - u.x, u.x];
    let wy = [one - u.y, u.y];
    let wz = [one - u.z, u.z];
    let sign = [-one, one];
    let mut g = [Vec3::zero(); 8];
    for (m, slot) in g.iter_mut().enumerate() {
        let (dx, dy, dz) = corner_offset(m);
        *slot = Vec3::new(
            sign[dx] * wy[dy] * wz[dz],
            wx[dx] * sign[dy] * wz[dz],
            wx[dx] * wy[dy] * sign[dz],
        );
    }
    g
}

/// Signed distance samples on a uniform cubic lattice.
#[derive(Clone, Debug, PartialEq)]
pub struct SdfGrid<T> {
    geometry: GridGeometry<T>,
    values: Vec<T>,
}

impl<T: Real> SdfGrid<T> {
    pub fn new(geometry: GridGeometry<T>, values: Vec<T>) -> Result<Self> {
        if values.len() != geometry.vertex_count() {
            return Err(Error::invalid(format!(
                "expected {} values for resolution {}, got {}",
                geometry.vertex_count(),
                geometry.resolution(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite grid value at index {i}")));
        }
        Ok(Self { geometry, values })
    }

    /// Samples `f` at every vertex.
    pub fn from_fn(geometry: GridGeometry<T>, f: impl Fn(Vec3<T>) -> T) -> Self {
        let n = geometry.resolution();
        let mut values = Vec::with_capacity(geometry.vertex_count());
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    values.push(f(geometry.vertex_position(i, j, k)));
                }
            }
        }
        Self { geometry, values }
    }

    pub fn constant(geometry: GridGeometry<T>, value: T) -> Self {
        Self {
            geometry,
            values: vec![value; geometry.vertex_count()],
        }
    }

    #[inline]
    pub fn geometry(&self) -> &GridGeometry<T> {
        &self.geometry
    }

    #[inline]
    pub fn resolution(&self) -> usize {
        self.geometry.resolution
    }

    #[inline]
    pub fn spacing(&self) -> T {
        self.geometry.spacing
    }

    #[inline]
    pub fn origin(&self) -> Vec3<T> {
        self.geometry.origin
    }

    #[inline]
    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Mutable access for optimizers. Callers must keep entries finite.
    #[inline]
    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    #[inline]
    pub fn value(&self, i: usize, j: usize, k: usize) -> T {
        self.values[self.geometry.index(i, j, k)]
    }

    #[inline]
    pub fn corner_values(&self, cell: CellIndex) -> [T; 8] {
        self.geometry.cell_corners(cell).map(|idx| self.values[idx])
    }

    /// Continuous field value at `p`.
    pub fn trilinear(&self, p: Vec3<T>) -> Result<T> {
        let (cell, local) = self.geometry.locate(p)?;
        Ok(self.trilinear_in_cell(cell, local))
    }

    /// Multilinear form of `cell` evaluated at local coordinates `u`.
    #[inline]
    pub fn trilinear_in_cell(&self, cell: CellIndex, u: Vec3<T>) -> T {
        let d = self.corner_values(cell);
        let w = trilinear_weights(u);
        let mut acc = T::zero();
        for m in 0..8 {
            acc += w[m] * d[m];
        }
        acc
    }

    /// Central-difference gradient at a vertex (one-sided on the boundary).
    pub fn vertex_gradient(&self, i: usize, j: usize, k: usize) -> Vec3<T> {
        let st = self.geometry.gradient_stencil(i, j, k);
        let comp = |a: usize| st[a][0].1 * self.values[st[a][0].0] + st[a][1].1 * self.values[st[a][1].0];
        Vec3::new(comp(0), comp(1), comp(2))
    }

    /// Seven-point Laplacian. Defined on interior vertices only.
    pub fn vertex_laplacian(&self, i: usize, j: usize, k: usize) -> Result<T> {
        if !self.geometry.is_interior(i, j, k) {
            return Err(Error::BoundaryVertex(i, j, k));
        }
        Ok(self.laplacian_unchecked(i, j, k))
    }

    #[inline]
    pub(crate) fn laplacian_unchecked(&self, i: usize, j: usize, k: usize) -> T {
        let g = &self.geometry;
        let c = self.values[g.index(i, j, k)];
        let sum = self.values[g.index(i + 1, j, k)]
            + self.values[g.index(i - 1, j, k)]
            + self.values[g.index(i, j + 1, k)]
            + self.values[g.index(i, j - 1, k)]
            + self.values[g.index(i, j, k + 1)]
            + self.values[g.index(i, j, k - 1)];
        let h = g.spacing;
        (sum - T::lit(6.0) * c) / (h * h)
    }

    /// Largest vertex-gradient norm; a Lipschitz estimate of the field.
    pub fn max_gradient_norm(&self) -> T {
        let n = self.resolution();
        let mut best = T::zero();
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    best = best.max(self.vertex_gradient(i, j, k).norm());
                }
            }
        }
        best
    }

    /// Resamples onto a finer lattice covering the same bounding box.
    pub fn upsample(&self, new_resolution: usize) -> Result<Self> {
        if new_resolution <= self.resolution() {
            return Err(Error::invalid(format!(
                "upsample target {new_resolution} must exceed current resolution {}",
                self.resolution()
            )));
        }
        let geometry = self.geometry.with_resolution(new_resolution)?;
        let n = new_resolution;
        let mut values = Vec::with_capacity(geometry.vertex_count());
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    let p = geometry.vertex_position(i, j, k);
                    values.push(self.trilinear(p)?);
                }
            }
        }
        Ok(Self { geometry, values })
    }

    pub fn cast<U: Real>(&self) -> SdfGrid<U> {
        let g = &self.geometry;
        SdfGrid {
            geometry: GridGeometry {
                resolution: g.resolution,
                origin: g.origin.cast(),
                extent: U::lit(g.extent.as_f64()),
                spacing: U::lit(g.spacing.as_f64()),
            },
            values: self.values.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }
}

/// Signed distance samples of a sphere.
pub fn init_sphere<T: Real>(
    resolution: usize,
    center: Vec3<T>,
    radius: T,
    origin: Vec3<T>,
    spacing: T,
) -> Result<SdfGrid<T>> {
    if !(radius > T::zero()) {
        return Err(Error::invalid(format!("sphere radius {radius} must be positive")));
    }
    let geometry = GridGeometry::new(resolution, origin, spacing)?;
    let lo = geometry.bbox_min();
    let hi = geometry.bbox_max();
    let closest = Vec3::new(
        center.x.max(lo.x).min(hi.x),
        center.y.max(lo.y).min(hi.y),
        center.z.max(lo.z).min(hi.z),
    );
    if (closest - center).norm() >= radius {
        return Err(Error::invalid("sphere does not intersect the grid bounding box"));
    }
    Ok(SdfGrid::from_fn(geometry, |x| sphere_sdf(x, center, radius)))
}

/// Signed distance samples of a torus whose axis is parallel to z.
pub fn init_torus<T: Real>(
    resolution: usize,
    center: Vec3<T>,
    major_radius: T,
    minor_radius: T,
    origin: Vec3<T>,
    spacing: T,
) -> Result<SdfGrid<T>> {
    if !(minor_radius > T::zero() && major_radius > minor_radius) {
        return Err(Error::invalid(format!(
            "torus radii must satisfy major > minor > 0 (got {major_radius}, {minor_radius})"
        )));
    }
    let geometry = GridGeometry::new(resolution, origin, spacing)?;
    Ok(SdfGrid::from_fn(geometry, |x| {
        torus_sdf(x, center, major_radius, minor_radius)
    }))
}

#[inline]
pub fn sphere_sdf<T: Real>(x: Vec3<T>, center: Vec3<T>, radius: T) -> T {
    (x - center).norm() - radius
}

#[inline]
pub fn torus_sdf<T: Real>(x: Vec3<T>, center: Vec3<T>, major: T, minor: T) -> T {
    let d = x - center;
    let ring = (d.x * d.x + d.y * d.y).sqrt() - major;
    (ring * ring + d.z * d.z).sqrt() - minor
}

/// Grid-shaped accumulator of loss derivatives with respect to the samples.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientBuffer<T> {
    resolution: usize,
    values: Vec<T>,
}

impl<T: Real> GradientBuffer<T> {
    pub fn zeros(resolution: usize) -> Self {
        Self {
            resolution,
            values: vec![T::zero(); resolution * resolution * resolution],
        }
    }

    pub fn like(grid: &SdfGrid<T>) -> Self {
        Self::zeros(grid.resolution())
    }

    pub fn from_values(resolution: usize, values: Vec<T>) -> Result<Self> {
        if values.len() != resolution * resolution * resolution {
            return Err(Error::invalid("gradient buffer length does not match resolution"));
        }
        Ok(Self { resolution, values })
    }

    #[inline]
    pub fn resolution(&self) -> usize {
        self.resolution
    }

    #[inline]
    pub fn values(&self) -> &[T] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    #[inline]
    pub fn add(&mut self, index: usize, v: T) {
        self.values[index] += v;
    }

    /// Elementwise `self += scale * other`.
    pub fn accumulate(&mut self, other: &Self, scale: T) {
        assert_eq!(self.resolution, other.resolution, "gradient buffer shape mismatch");
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * *b;
        }
    }

    /// Sums per-worker buffers in a fixed order.
    pub fn merge_all(resolution: usize, parts: impl IntoIterator<Item = Self>) -> Self {
        let mut out = Self::zeros(resolution);
        for p in parts {
            out.accumulate(&p, T::one());
        }
        out
    }

    /// Clears every entry on the outer faces of the grid.
    pub fn zero_boundary(&mut self) {
        let n = self.resolution;
        let last = n.saturating_sub(1);
        for k in 0..n {
            for j in 0..n {
                let row = n * (j + n * k);
                if k == 0 || k == last || j == 0 || j == last {
                    self.values[row..row + n].fill(T::zero());
                } else {
                    self.values[row] = T::zero();
                    self.values[row + last] = T::zero();
                }
            }
        }
    }

    pub fn norm(&self) -> T {
        self.values.iter().fold(T::zero(), |a, v| a + *v * *v).sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.values.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn first_non_finite(&self) -> Option<usize> {
        self.values.iter().position(|v| !v.is_finite())
    }
}
