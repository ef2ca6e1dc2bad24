use sdftrace::eval::{marching_cubes, symmetric_hausdorff, HausdorffOptions, TriangleMesh};
use sdftrace::{init_sphere, init_torus, SdfGrid, Vec3};

fn torus(n: usize) -> SdfGrid<f64> {
    init_torus(n, Vec3::zero(), 0.3, 0.12, Vec3::splat(-0.5), 1.0 / (n - 1) as f64).unwrap()
}

fn opts(seed: u64) -> HausdorffOptions {
    HausdorffOptions {
        samples: 20_000,
        seed,
        box_edge: 1.0,
    }
}

#[test]
fn torus_extraction_converges_with_resolution() {
    let coarse = marching_cubes(&torus(32), 0.0);
    let fine = marching_cubes(&torus(64), 0.0);
    assert!(coarse.is_closed_and_oriented());
    assert_eq!(coarse.euler_characteristic(), 0);
    let h = 1.0 / 31.0;
    let d = symmetric_hausdorff(&coarse, &fine, &opts(3)).unwrap();
    assert!(d <= 2.0 * h, "{d} > {}", 2.0 * h);
}

#[test]
fn hausdorff_ignores_argument_order() {
    let a = marching_cubes(&torus(24), 0.0);
    let b = marching_cubes(&init_sphere(24, Vec3::zero(), 0.35, Vec3::splat(-0.5), 1.0 / 23.0).unwrap(), 0.0);
    for seed in [0, 7] {
        let ab = symmetric_hausdorff(&a, &b, &opts(seed)).unwrap();
        let ba = symmetric_hausdorff(&b, &a, &opts(seed)).unwrap();
        assert_eq!(ab, ba);
        assert!(ab > 0.0);
    }
    assert_eq!(symmetric_hausdorff(&a, &a, &opts(0)).unwrap(), 0.0);
}

#[test]
fn hausdorff_of_a_translated_mesh_is_the_offset() {
    let a = marching_cubes(&init_sphere(24, Vec3::zero(), 0.3, Vec3::splat(-0.5), 1.0 / 23.0).unwrap(), 0.0);
    let shift = 0.05;
    let b = a.transformed(1.0, [shift, 0.0, 0.0]);
    let d = symmetric_hausdorff(&a, &b, &opts(1)).unwrap();
    // at most the shift, and close to it on a near-sphere
    assert!(d <= shift + 1e-12 && d > 0.8 * shift, "{d}");
    let halved = symmetric_hausdorff(&a, &b, &HausdorffOptions { box_edge: 2.0, ..opts(1) }).unwrap();
    assert!((halved - d / 2.0).abs() <= 1e-15);
}

#[test]
fn obj_round_trip_preserves_the_mesh() {
    let a = marching_cubes(&torus(20), 0.0);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.obj");
    a.write_obj(&path).unwrap();
    let b = TriangleMesh::read_obj(&path).unwrap();
    assert_eq!(a.triangles, b.triangles);
    let d = symmetric_hausdorff(&a, &b, &opts(0)).unwrap();
    assert!(d <= 1e-6, "{d}");
}

#[test]
fn too_few_samples_are_rejected() {
    let a = marching_cubes(&torus(16), 0.0);
    let o = HausdorffOptions { samples: 9_999, ..opts(0) };
    assert!(symmetric_hausdorff(&a, &a, &o).is_err());
}
