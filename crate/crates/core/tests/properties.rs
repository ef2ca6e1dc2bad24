use proptest::prelude::*;
use sdftrace::grid::trilinear_weights;
use sdftrace::loss::{eikonal_loss, geometry_loss, image_loss, narrow_band_mask, regularizers, total_loss};
use sdftrace::optim::{adam_step, AdamParams, AdamState};
use sdftrace::{
    canonical_rig, init_sphere, render, sphere_trace, GradientBuffer, GridGeometry, Image, Light, LossWeights,
    SdfGrid, Trace, TraceParams, Vec3,
};

fn geo(n: usize) -> GridGeometry<f64> {
    GridGeometry::from_extent(n, Vec3::splat(-0.5), 1.0).unwrap()
}

fn random_grid(n: usize, values: &[f64]) -> SdfGrid<f64> {
    SdfGrid::new(geo(n), values[..n * n * n].to_vec()).unwrap()
}

/// Two unit vectors completing `d` to an orthonormal basis.
fn basis(d: Vec3<f64>) -> (Vec3<f64>, Vec3<f64>) {
    let a = if d.x.abs() < 0.9 { Vec3::new(1.0, 0.0, 0.0) } else { Vec3::new(0.0, 1.0, 0.0) };
    let e1 = d.cross(a).normalized();
    (e1, d.cross(e1))
}

fn unit() -> impl Strategy<Value = f64> {
    0.0..1.0f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn trilinear_reproduces_vertex_values(
        values in prop::collection::vec(-1.0..1.0f64, 125),
        i in 0usize..5, j in 0usize..5, k in 0usize..5,
    ) {
        let g = random_grid(5, &values);
        let p = g.geometry().vertex_position(i, j, k);
        prop_assert!((g.trilinear(p).unwrap() - g.value(i, j, k)).abs() <= 1e-15);
    }

    #[test]
    fn trilinear_is_continuous_across_cell_faces(
        values in prop::collection::vec(-1.0..1.0f64, 64),
        c in 0usize..2, j in 0usize..3, k in 0usize..3, v in unit(), w in unit(),
    ) {
        // the face x = c + 1 seen from the cells on both sides
        let g = random_grid(4, &values);
        let left = g.trilinear_in_cell([c, j, k], Vec3::new(1.0, v, w));
        let right = g.trilinear_in_cell([c + 1, j, k], Vec3::new(0.0, v, w));
        prop_assert!((left - right).abs() <= 1e-14);
    }

    #[test]
    fn trilinear_weights_are_a_partition_of_unity(u in unit(), v in unit(), w in unit()) {
        let ws = trilinear_weights(Vec3::new(u, v, w));
        prop_assert!(ws.iter().all(|x| *x >= 0.0));
        prop_assert!((ws.iter().sum::<f64>() - 1.0).abs() <= 1e-15);
    }

    #[test]
    fn affine_fields_are_exact_everywhere(
        a in -2.0..2.0f64, b in -2.0..2.0f64, c in -2.0..2.0f64, d in -1.0..1.0f64,
        x in -0.5..0.5f64, y in -0.5..0.5f64, z in -0.5..0.5f64,
        up in 9usize..20,
    ) {
        let f = |p: Vec3<f64>| a * p.x + b * p.y + c * p.z + d;
        let g = SdfGrid::from_fn(geo(8), f);
        let p = Vec3::new(x, y, z);
        prop_assert!((g.trilinear(p).unwrap() - f(p)).abs() <= 1e-13);
        // one-sided boundary differences are exact on affine fields too
        for (i, j, k) in [(0, 0, 0), (7, 3, 2), (4, 4, 4)] {
            let grad = g.vertex_gradient(i, j, k);
            prop_assert!((grad - Vec3::new(a, b, c)).norm() <= 1e-12);
        }
        let fine = g.upsample(up).unwrap();
        prop_assert_eq!(fine.geometry().origin(), g.geometry().origin());
        prop_assert_eq!(fine.geometry().extent(), g.geometry().extent());
        for (idx, v) in fine.values().iter().enumerate() {
            let [i, j, k] = fine.geometry().coords(idx);
            prop_assert!((v - f(fine.geometry().vertex_position(i, j, k))).abs() <= 1e-13);
        }
    }

    #[test]
    fn laplacian_is_exact_on_quadratics(
        a in -2.0..2.0f64, b in -2.0..2.0f64, c in -2.0..2.0f64, e in -1.0..1.0f64,
        i in 1usize..8, j in 1usize..8, k in 1usize..8,
    ) {
        let f = |p: Vec3<f64>| a * p.x * p.x + b * p.y * p.y + c * p.z * p.z + e * p.x * p.y;
        let g = SdfGrid::from_fn(geo(9), f);
        let lap = g.vertex_laplacian(i, j, k).unwrap();
        prop_assert!((lap - 2.0 * (a + b + c)).abs() <= 1e-9);
    }

    #[test]
    fn image_loss_is_symmetric_and_nonnegative(
        a in prop::collection::vec(0.0..1.1f64, 36),
        b in prop::collection::vec(0.0..1.1f64, 36),
    ) {
        let ia = Image::from_data(6, 6, a).unwrap();
        let ib = Image::from_data(6, 6, b).unwrap();
        let (lab, _) = image_loss(&ia, &ib).unwrap();
        let (lba, _) = image_loss(&ib, &ia).unwrap();
        prop_assert_eq!(lab, lba);
        prop_assert!(lab >= 0.0);
        prop_assert_eq!(image_loss(&ia, &ia).unwrap().0, 0.0);
    }

    #[test]
    fn band_grows_with_its_width(
        values in prop::collection::vec(-0.5..0.5f64, 216),
        mu1 in 0.1..3.0f64, extra in 0.0..3.0f64,
    ) {
        let g = random_grid(6, &values);
        let small = narrow_band_mask(&g, mu1).unwrap();
        let large = narrow_band_mask(&g, mu1 + extra).unwrap();
        prop_assert!(small.is_subset_of(&large));
    }

    #[test]
    fn adam_moments_stay_finite_and_nonnegative(
        grads in prop::collection::vec(prop::collection::vec(-1e3..1e3f64, 27), 1..12),
    ) {
        let mut g = SdfGrid::constant(geo(3), 0.0);
        let mut st = AdamState::new(3, AdamParams::default()).unwrap();
        for vals in grads {
            let buf = GradientBuffer::from_values(3, vals).unwrap();
            adam_step(&mut st, &mut g, &buf).unwrap();
            prop_assert!(st.v.iter().all(|v| *v >= 0.0 && v.is_finite()));
            prop_assert!(st.m.iter().all(|m| m.is_finite()));
        }
    }

    #[test]
    fn regularizer_gradient_is_the_sum_of_its_parts(
        values in prop::collection::vec(-0.5..0.5f64, 216),
        l1 in 0.0..1.0f64, l2 in 0.0..1.0f64,
    ) {
        let g = random_grid(6, &values);
        let weights = LossWeights { lambda_reg: l1, lambda_geo: l2, use_mask: false, ..LossWeights::default() };
        let (reg, geo_l, grad) = regularizers(&g, &weights).unwrap();
        let (er, eg) = eikonal_loss(&g, weights.eikonal_form);
        let (gr, gg) = geometry_loss(&g);
        prop_assert_eq!(reg, er);
        prop_assert_eq!(geo_l, gr);
        for ((t, a), b) in grad.values().iter().zip(eg.values()).zip(gg.values()) {
            prop_assert!((t - (l1 * a + l2 * b)).abs() <= 1e-9 * (1.0 + t.abs()));
        }
    }

    #[test]
    fn rays_are_unit_length(px in 0usize..37, py in 0usize..37) {
        let cams = canonical_rig(Vec3::zero(), 0.5, 2.0, 45f64.to_radians(), 37).unwrap();
        for cam in &cams {
            let r = cam.generate_ray(px, py).unwrap();
            prop_assert!((r.direction.norm() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn sphere_trace_agrees_with_the_analytic_sphere(
        theta in 0.0..std::f64::consts::PI, phi in 0.0..std::f64::consts::TAU,
        ox in -0.4..0.4f64, oy in -0.4..0.4f64,
    ) {
        let n = 48;
        let geo = geo(n);
        let r = 0.3;
        let grid = init_sphere(n, Vec3::zero(), r, geo.origin(), geo.spacing()).unwrap();
        let dir = Vec3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos());
        // aim at an offset point in the plane through the center orthogonal to dir
        let (e1, e2) = basis(dir);
        let target = e1 * ox + e2 * oy;
        let origin = target - dir * 2.0;
        let ray = sdftrace::Ray::new(origin, dir).unwrap();
        let b = target.norm();
        let h = grid.spacing();
        prop_assume!((b - r).abs() > h);
        let trace = sphere_trace(&grid, &ray, &TraceParams::for_grid(&grid)).unwrap();
        match trace {
            Trace::Hit(hit) => {
                let t_true = 2.0 - (r * r - b * b).sqrt();
                prop_assert!(b < r);
                prop_assert!((hit.t - t_true).abs() <= h, "t {} vs {}", hit.t, t_true);
            }
            Trace::Miss { .. } => prop_assert!(b > r),
        }
    }

    #[test]
    fn shading_stays_within_light_bounds(seed in 0u64..1000, res in 8usize..20) {
        let n = 16;
        let geo = geo(n);
        let noise = |p: Vec3<f64>| {
            let s = (seed as f64) * 0.37;
            0.02 * ((13.0 * p.x + s).sin() * (11.0 * p.y - s).cos() + (7.0 * p.z * s.cos()).sin())
        };
        let grid = SdfGrid::from_fn(geo, |p| p.norm() - 0.3 + noise(p));
        let cams = canonical_rig(Vec3::zero(), 0.5, 2.0, 45f64.to_radians(), res).unwrap();
        for cam in cams.iter().step_by(5) {
            let light = Light::new(cam.forward(), 1.0, 0.1, 1.0).unwrap();
            let img = render(&grid, cam, &light, &TraceParams::for_grid(&grid), false).image;
            prop_assert!(img.data().iter().all(|v| *v >= 0.0 && *v <= 1.1 + 1e-12));
        }
    }
}

#[test]
fn total_loss_gradient_is_linear_in_its_terms() {
    let n = 12;
    let geo = geo(n);
    let grid = SdfGrid::from_fn(geo, |p| p.norm() - 0.3 + 0.01 * (9.0 * p.x).sin());
    let target_grid = init_sphere(n, Vec3::zero(), 0.33, geo.origin(), geo.spacing()).unwrap();
    let cams = canonical_rig(Vec3::zero(), 0.5, 2.0, 45f64.to_radians(), 20).unwrap();
    let params = TraceParams::for_grid(&grid);
    let views: Vec<_> = cams
        .iter()
        .take(3)
        .map(|c| render(&grid, c, &Light::new(c.forward(), 1.0, 0.1, 1.0).unwrap(), &params, true))
        .collect();
    let targets: Vec<_> = cams
        .iter()
        .take(3)
        .map(|c| render(&target_grid, c, &Light::new(c.forward(), 1.0, 0.1, 1.0).unwrap(), &params, false).image)
        .collect();
    let w = LossWeights::default();
    let (full, g_full) = total_loss(&grid, &views, &targets, &w).unwrap();
    let none = LossWeights {
        lambda_reg: 0.0,
        lambda_geo: 0.0,
        ..w
    };
    let (img_only, g_img) = total_loss(&grid, &views, &targets, &none).unwrap();
    let (_, _, g_reg) = regularizers(&grid, &w).unwrap();
    assert_eq!(img_only.total, img_only.image_loss);
    assert!((full.total - (full.image_loss + w.lambda_reg * full.reg_loss + w.lambda_geo * full.geo_loss)).abs() < 1e-9);
    for ((a, b), c) in g_full.values().iter().zip(g_img.values()).zip(g_reg.values()) {
        assert!((a - (b + c)).abs() <= 1e-12 * (1.0 + a.abs()));
    }
}
