//! Cameras, lighting and ray generation.
//!
//! Images are square or rectangular grids with pixel `(0, 0)` in the top-left
//! corner; every ray passes through a pixel center.

use crate::error::{Error, Result};
use crate::grid::GridGeometry;
use crate::real::Real;
use crate::vec3::Vec3;

/// Ray with a unit direction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray<T> {
    pub origin: Vec3<T>,
    pub direction: Vec3<T>,
}

impl<T: Real> Ray<T> {
    /// Builds a ray, normalizing `direction`.
    pub fn new(origin: Vec3<T>, direction: Vec3<T>) -> Result<Self> {
        let n = direction.norm();
        if !(n > T::zero()) || !n.is_finite() {
            return Err(Error::invalid("ray direction must be non-zero"));
        }
        Ok(Self {
            origin,
            direction: direction / n,
        })
    }

    #[inline]
    pub fn at(&self, t: T) -> Vec3<T> {
        self.origin + self.direction * t
    }

    #[inline]
    pub fn has_unit_direction(&self) -> bool {
        (self.direction.norm() - T::one()).abs() <= T::lit(1e-12)
    }
}

/// Camera placement without intrinsics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraPose<T> {
    pub position: Vec3<T>,
    pub look_at: Vec3<T>,
    pub up: Vec3<T>,
}

/// Pinhole camera.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera<T> {
    pose: CameraPose<T>,
    vertical_fov: T,
    width: usize,
    height: usize,
    forward: Vec3<T>,
    right: Vec3<T>,
    true_up: Vec3<T>,
}

impl<T: Real> Camera<T> {
    pub fn new(pose: CameraPose<T>, vertical_fov: T, width: usize, height: usize) -> Result<Self> {
        let view = pose.look_at - pose.position;
        if !(view.norm() > T::zero()) {
            return Err(Error::invalid("camera position coincides with its look-at point"));
        }
        if !(vertical_fov > T::zero() && vertical_fov < T::PI()) {
            return Err(Error::invalid(format!("field of view {vertical_fov} outside (0, pi)")));
        }
        if width == 0 || height == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        let forward = view.normalized();
        let side = forward.cross(pose.up);
        if side.norm() <= T::lit(1e-9) * pose.up.norm() {
            return Err(Error::invalid("camera up vector is parallel to the view direction"));
        }
        let right = side.normalized();
        let true_up = right.cross(forward);
        Ok(Self {
            pose,
            vertical_fov,
            width,
            height,
            forward,
            right,
            true_up,
        })
    }

    /// Same pose and field of view, different image size.
    pub fn with_resolution(&self, width: usize, height: usize) -> Result<Self> {
        Self::new(self.pose, self.vertical_fov, width, height)
    }

    #[inline]
    pub fn pose(&self) -> &CameraPose<T> {
        &self.pose
    }

    #[inline]
    pub fn position(&self) -> Vec3<T> {
        self.pose.position
    }

    #[inline]
    pub fn look_at(&self) -> Vec3<T> {
        self.pose.look_at
    }

    #[inline]
    pub fn vertical_fov(&self) -> T {
        self.vertical_fov
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    /// Unit view direction.
    #[inline]
    pub fn forward(&self) -> Vec3<T> {
        self.forward
    }

    /// Ray from the camera through the center of pixel `(px, py)`.
    pub fn generate_ray(&self, px: usize, py: usize) -> Result<Ray<T>> {
        if px >= self.width || py >= self.height {
            return Err(Error::invalid(format!(
                "pixel ({px}, {py}) outside {}x{} image",
                self.width, self.height
            )));
        }
        Ok(self.ray_unchecked(px, py))
    }

    #[inline]
    pub(crate) fn ray_unchecked(&self, px: usize, py: usize) -> Ray<T> {
        let half = T::lit(0.5);
        let two = T::lit(2.0);
        let w = T::from_usize_lossy(self.width);
        let h = T::from_usize_lossy(self.height);
        let tan = (self.vertical_fov * half).tan();
        let sx = ((T::from_usize_lossy(px) + half) / w * two - T::one()) * tan * (w / h);
        let sy = (T::one() - (T::from_usize_lossy(py) + half) / h * two) * tan;
        let dir = self.forward + self.right * sx + self.true_up * sy;
        Ray {
            origin: self.pose.position,
            direction: dir.normalized(),
        }
    }
}

/// Directional light; `direction` points from the light toward the surface.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Light<T> {
    pub direction: Vec3<T>,
    pub intensity: T,
    pub ambient: T,
    pub albedo: T,
}

impl<T: Real> Light<T> {
    pub fn new(direction: Vec3<T>, intensity: T, ambient: T, albedo: T) -> Result<Self> {
        let n = direction.norm();
        if !(n > T::zero()) {
            return Err(Error::invalid("light direction must be non-zero"));
        }
        for (name, v) in [("intensity", intensity), ("ambient", ambient), ("albedo", albedo)] {
            if !(v >= T::zero()) || !v.is_finite() {
                return Err(Error::invalid(format!("light {name} {v} must be finite and non-negative")));
            }
        }
        if albedo > T::one() {
            return Err(Error::invalid(format!("albedo {albedo} exceeds 1")));
        }
        Ok(Self {
            direction: direction / n,
            intensity,
            ambient,
            albedo,
        })
    }

    /// Light colocated with the camera, shining along its view direction.
    pub fn headlight(camera: &Camera<T>, params: &LightParams<T>) -> Self {
        Self {
            direction: camera.forward(),
            intensity: params.intensity,
            ambient: params.ambient,
            albedo: params.albedo,
        }
    }

    /// Largest attainable pixel value.
    #[inline]
    pub fn max_radiance(&self) -> T {
        self.ambient + self.albedo * self.intensity
    }
}

/// Photometric constants shared by every headlight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LightParams<T> {
    pub intensity: T,
    pub ambient: T,
    pub albedo: T,
}

impl<T: Real> Default for LightParams<T> {
    fn default() -> Self {
        Self {
            intensity: T::one(),
            ambient: T::lit(0.1),
            albedo: T::one(),
        }
    }
}

/// Number of cameras in the cube rig: 6 faces, 12 edges, 8 vertices.
pub const RIG_SIZE: usize = 26;

/// Unit offsets toward the face centers, edge midpoints and vertices of a
/// cube, in that order.
pub fn rig_directions<T: Real>() -> Vec<Vec3<T>> {
    let mut dirs: Vec<(usize, [i32; 3])> = Vec::with_capacity(RIG_SIZE);
    for z in -1..=1 {
        for y in -1..=1 {
            for x in -1..=1 {
                let nz = [x, y, z].iter().filter(|c| **c != 0).count();
                if nz > 0 {
                    dirs.push((nz, [x, y, z]));
                }
            }
        }
    }
    dirs.sort_by_key(|(nz, c)| (*nz, std::cmp::Reverse(*c)));
    dirs.into_iter()
        .map(|(_, [x, y, z])| Vec3::from_f64(x as f64, y as f64, z as f64).normalized())
        .collect()
}

/// Up vector for a camera looking along `view`: +z, or +y when the view is vertical.
pub fn default_up<T: Real>(view: Vec3<T>) -> Vec3<T> {
    let v = view.normalized();
    if v.x.abs() <= T::lit(1e-12) && v.y.abs() <= T::lit(1e-12) {
        Vec3::new(T::zero(), T::one(), T::zero())
    } else {
        Vec3::new(T::zero(), T::zero(), T::one())
    }
}

/// Twenty-six cameras around a cubic bounding box, all aimed at its center.
pub fn canonical_rig<T: Real>(
    bbox_center: Vec3<T>,
    bbox_half_extent: T,
    distance: T,
    fov: T,
    image_res: usize,
) -> Result<Vec<Camera<T>>> {
    if !(bbox_half_extent > T::zero()) {
        return Err(Error::invalid("bounding box half extent must be positive"));
    }
    if !(distance > bbox_half_extent * T::lit(3.0).sqrt()) {
        return Err(Error::invalid(format!(
            "camera distance {distance} must exceed the box half diagonal {}",
            bbox_half_extent * T::lit(3.0).sqrt()
        )));
    }
    rig_directions::<T>()
        .into_iter()
        .map(|u| {
            let pose = CameraPose {
                position: bbox_center + u * distance,
                look_at: bbox_center,
                up: default_up(-u),
            };
            Camera::new(pose, fov, image_res, image_res)
        })
        .collect()
}

/// Clamp range for [`image_res_for`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ImageResLimits {
    pub min: usize,
    pub max: usize,
}

impl Default for ImageResLimits {
    fn default() -> Self {
        Self { min: 16, max: 512 }
    }
}

/// Projected diameter, in pixels, of a sphere of radius `radius` at depth
/// `depth` for a square image of `res` pixels.
pub fn projected_diameter_px<T: Real>(radius: T, depth: T, fov: T, res: usize) -> T {
    let half_res = T::from_usize_lossy(res) * T::lit(0.5);
    T::lit(2.0) * radius / depth * half_res / (fov * T::lit(0.5)).tan()
}

/// Largest image resolution at which a sphere of radius `spacing` at `depth`
/// covers at most a 2x2 pixel block, before clamping.
pub fn image_res_unclamped<T: Real>(spacing: T, depth: T, fov: T) -> usize {
    let x = T::lit(2.0) * depth * (fov * T::lit(0.5)).tan() / spacing;
    x.floor().to_usize().unwrap_or(usize::MAX)
}

/// Distance from a camera `camera_distance` away from the box center to the
/// farthest box corner, bounded by the vertex-camera case.
pub fn far_corner_depth<T: Real>(geometry: &GridGeometry<T>, camera_distance: T) -> T {
    camera_distance + geometry.extent() * T::lit(0.5) * T::lit(3.0).sqrt()
}

/// Image resolution matched to the grid spacing.
pub fn image_res_for<T: Real>(
    geometry: &GridGeometry<T>,
    camera_distance: T,
    fov: T,
    limits: ImageResLimits,
) -> usize {
    let depth = far_corner_depth(geometry, camera_distance);
    image_res_unclamped(geometry.spacing(), depth, fov).clamp(limits.min, limits.max)
}

/// Parses one pose per line: `px py pz  lx ly lz  ux uy uz`. Blank lines and
/// `#` comments are skipped.
pub fn parse_pose_list<T: Real>(text: &str) -> std::result::Result<Vec<CameraPose<T>>, String> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let nums: std::result::Result<Vec<f64>, _> = line.split_whitespace().map(str::parse).collect();
        let nums = nums.map_err(|e| format!("line {}: {e}", lineno + 1))?;
        if nums.len() != 9 {
            return Err(format!("line {}: expected 9 numbers, found {}", lineno + 1, nums.len()));
        }
        out.push(CameraPose {
            position: Vec3::from_f64(nums[0], nums[1], nums[2]),
            look_at: Vec3::from_f64(nums[3], nums[4], nums[5]),
            up: Vec3::from_f64(nums[6], nums[7], nums[8]),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn rig() -> Vec<Camera<f64>> {
        canonical_rig(Vec3::zero(), 0.5, 2.0, 45f64.to_radians(), 33).unwrap()
    }

    #[test]
    fn rig_has_26_distinct_cameras_on_a_sphere() {
        let cams = rig();
        assert_eq!(cams.len(), 26);
        for (a, ca) in cams.iter().enumerate() {
            assert_relative_eq!(ca.position().norm(), 2.0, epsilon = 1e-12);
            let to_center = (Vec3::zero() - ca.position()).normalized();
            assert_relative_eq!(ca.forward().dot(to_center), 1.0, epsilon = 1e-12);
            for cb in &cams[a + 1..] {
                assert!((ca.position() - cb.position()).norm() > 1e-6);
            }
        }
    }

    #[test]
    fn rig_face_and_vertex_directions() {
        let cams = rig();
        let plus_x = cams
            .iter()
            .find(|c| (c.position() - Vec3::new(2.0, 0.0, 0.0)).norm() < 1e-12)
            .unwrap();
        assert_eq!(plus_x.forward(), Vec3::new(-1.0, 0.0, 0.0));
        let s = 1.0 / 3f64.sqrt();
        let corner = cams
            .iter()
            .find(|c| c.position().x > 0.0 && c.position().y > 0.0 && c.position().z > 0.0)
            .unwrap();
        let f = corner.forward();
        for a in 0..3 {
            assert_relative_eq!(f[a], -s, epsilon = 1e-12);
        }
    }

    #[test]
    fn rig_rejects_short_distance() {
        assert!(canonical_rig(Vec3::<f64>::zero(), 0.5, 0.8, 0.7, 16).is_err());
    }

    #[test]
    fn center_pixel_follows_the_principal_axis() {
        for cam in rig() {
            let r = cam.generate_ray(16, 16).unwrap();
            assert!((r.direction - cam.forward()).norm() < 1e-12);
            assert!(r.has_unit_direction());
        }
    }

    #[test]
    fn corner_rays_are_symmetric() {
        let cam = rig()[3];
        let n = cam.width() - 1;
        let angles: Vec<f64> = [(0, 0), (n, 0), (0, n), (n, n)]
            .iter()
            .map(|&(x, y)| cam.generate_ray(x, y).unwrap().direction.dot(cam.forward()).acos())
            .collect();
        for a in &angles {
            assert_relative_eq!(*a, angles[0], epsilon = 1e-12);
        }
    }

    #[test]
    fn horizontal_span_is_fov_minus_one_pitch() {
        // square image, so horizontal fov equals vertical fov
        let fov = 45f64.to_radians();
        let w = 33usize;
        let cam = Camera::new(
            CameraPose {
                position: Vec3::new(0.0, -2.0, 0.0),
                look_at: Vec3::zero(),
                up: Vec3::new(0.0, 0.0, 1.0),
            },
            fov,
            w,
            w,
        )
        .unwrap();
        let a = cam.generate_ray(0, w / 2).unwrap().direction;
        let b = cam.generate_ray(w - 1, w / 2).unwrap().direction;
        let got = a.dot(b).acos();
        // pixel centers sit at +-(1 - 1/w) of the half-width on the image plane
        let expected = 2.0 * ((1.0 - 1.0 / w as f64) * (fov / 2.0).tan()).atan();
        assert_relative_eq!(got, expected, epsilon = 1e-12);
        assert!(got < fov);
        assert!(cam.generate_ray(w, 0).is_err());
    }

    #[test]
    fn image_res_rule() {
        let fov = 45f64.to_radians();
        let geo8 = GridGeometry::from_extent(8, Vec3::splat(-0.5), 1.0).unwrap();
        let geo64 = geo8.with_resolution(64).unwrap();
        let lim = ImageResLimits { min: 16, max: 100_000 };
        assert!(image_res_for(&geo64, 2.0, fov, lim) >= image_res_for(&geo8, 2.0, fov, lim));

        // h/z = tan(fov/2) gives R = 2, clamped to 16
        let right = std::f64::consts::FRAC_PI_2;
        let t = (right * 0.5).tan();
        assert_eq!(image_res_unclamped(t, 1.0, right), 2);
        let geo = GridGeometry::from_extent(2, Vec3::splat(-0.5), 1.0).unwrap();
        assert_eq!(image_res_for(&geo, 0.1, 0.2, ImageResLimits::default()), 16);
    }

    #[test]
    fn pose_list_parsing() {
        let poses = parse_pose_list::<f64>("# header\n1 2 3 0 0 0 0 0 1\n\n4 5 6 0 0 0 0 1 0 # c\n").unwrap();
        assert_eq!(poses.len(), 2);
        assert_eq!(poses[1].position, Vec3::new(4.0, 5.0, 6.0));
        let err = parse_pose_list::<f64>("1 2 3\n").unwrap_err();
        assert!(err.contains("line 1"));
    }

    #[test]
    fn light_validation() {
        assert!(Light::new(Vec3::new(0.0, 0.0, -1.0), 1.0, 0.1, 1.0).is_ok());
        assert!(Light::new(Vec3::new(0.0, 0.0, -1.0), -1.0, 0.1, 1.0).is_err());
        assert!(Light::new(Vec3::new(0.0, 0.0, -1.0), 1.0, 0.1, 1.5).is_err());
        assert!(Light::new(Vec3::zero(), 1.0, 0.1, 1.0).is_err());
    }
}
