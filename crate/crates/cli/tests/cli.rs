use std::path::Path;
use std::process::{Command, Output};

use sdftrace::container::write_grid;
use sdftrace::{init_sphere, GridGeometry, Image, SdfGrid, Vec3};
use sha2::{Digest, Sha256};

fn sdftrace(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sdftrace"))
        .args(args)
        .env("SDFTRACE_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn digest(p: &Path) -> Vec<u8> {
    Sha256::digest(std::fs::read(p).unwrap()).to_vec()
}

fn pfms(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "pfm"))
        .collect();
    v.sort();
    v
}

#[test]
fn render_writes_every_view_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let grid = init_sphere(16, Vec3::zero(), 0.3, Vec3::splat(-0.5), 1.0 / 15.0).unwrap();
    let file = dir.path().join("sphere.sdfg");
    write_grid(&grid, &file).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = sdftrace(&["--out", path(out), "render", path(&file), "--image-res", "24"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (pa, pb) = (pfms(&a), pfms(&b));
    assert_eq!(pa.len(), 26);
    assert!(a.join("view_25.png").exists());
    for (x, y) in pa.iter().zip(&pb) {
        assert_eq!(digest(x), digest(y));
    }
    let img = Image::<f64>::read_pfm(&pa[0]).unwrap();
    assert_eq!((img.width(), img.height()), (24, 24));
    assert!(img.data().iter().any(|v| *v > 0.5));
}

#[test]
fn empty_grid_renders_background() {
    let dir = tempfile::tempdir().unwrap();
    let geo = GridGeometry::from_extent(8, Vec3::splat(-0.5), 1.0).unwrap();
    let file = dir.path().join("empty.sdfg");
    write_grid(&SdfGrid::constant(geo, 1.0), &file).unwrap();
    let out = dir.path().join("r");
    let o = sdftrace(&["--out", path(&out), "render", path(&file)]);
    assert!(o.status.success());
    for p in pfms(&out) {
        assert!(Image::<f64>::read_pfm(&p).unwrap().data().iter().all(|v| *v == 0.0));
    }
}

#[test]
fn exit_codes_follow_the_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    // unknown configuration key
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"optim": {"learning_rate": 0.1}}"#).unwrap();
    assert_eq!(sdftrace(&["--config", path(&cfg), "gradcheck"]).status.code(), Some(1));
    // neither ground truth nor targets
    let out = dir.path().join("o");
    assert_eq!(sdftrace(&["--out", path(&out), "reconstruct"]).status.code(), Some(1));
    // target directory without images
    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let o = sdftrace(&["--out", path(&out), "reconstruct", "--targets", path(&empty)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("view_00.pfm"));
    // unreadable grid file
    let missing = dir.path().join("missing.sdfg");
    assert_eq!(sdftrace(&["--out", path(&out), "render", path(&missing)]).status.code(), Some(3));
    // garbage grid file
    let junk = dir.path().join("junk.sdfg");
    std::fs::write(&junk, b"not a grid").unwrap();
    assert_eq!(sdftrace(&["--out", path(&out), "render", path(&junk)]).status.code(), Some(1));
}

#[test]
fn effective_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let o = sdftrace(&["--seed", "42", "--deterministic", "--print-effective-config"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["seed"], 42);
    assert_eq!(v["deterministic"], true);
    assert_eq!(v["optim"]["grid_resolutions"], serde_json::json!([8, 16, 32, 64]));
    // feeding it back changes nothing
    let cfg = dir.path().join("eff.json");
    std::fs::write(&cfg, &text).unwrap();
    let again = sdftrace(&["--config", path(&cfg), "--print-effective-config"]);
    assert_eq!(String::from_utf8(again.stdout).unwrap(), text);
}

#[test]
fn evaluate_is_symmetric_and_zero_on_itself() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for (out, shape, res) in [(&a, "torus", "24"), (&b, "sphere", "20")] {
        let o = sdftrace(&["--out", path(out), "make-target", "--shape", shape, "--resolution", res]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (ma, mb) = (a.join("target.obj"), b.join("target.obj"));
    let value = |x: &Path, y: &Path| -> f64 {
        let o = sdftrace(&["evaluate", path(x), path(y), "--samples", "10000"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8(o.stdout).unwrap().trim().parse().unwrap()
    };
    assert_eq!(value(&ma, &ma), 0.0);
    let ab = value(&ma, &mb);
    assert!(ab > 0.0);
    assert_eq!(ab, value(&mb, &ma));

    let csv = dir.path().join("e.csv");
    let o = sdftrace(&["evaluate", path(&ma), path(&mb), "--samples", "10000", "--csv", path(&csv)]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("mesh_a,mesh_b,samples,seed,value"));
}
