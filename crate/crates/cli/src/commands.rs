use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use sdftrace::container::{read_grid, write_adam, write_grid};
use sdftrace::eval::{marching_cubes, symmetric_hausdorff, HausdorffOptions, TriangleMesh};
use sdftrace::optim::{IterationRecord, Observer, StageSummary};
use sdftrace::scene::{image_res_for, parse_pose_list};
use sdftrace::{
    canonical_rig, init_sphere, init_torus, reconstruct_multires, render, AdamState, Camera, Image, Light, SdfGrid,
    TargetSource, Vec3,
};
use serde::Serialize;

use crate::config::{RunConfig, Shape};
use crate::error::CliError;

/// Writes to stdout, ignoring a closed pipe.
pub fn emit(text: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|_| out.flush());
}

/// Target and output file name of view `i`.
pub fn view_name(i: usize) -> String {
    format!("view_{i:02}")
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// The configured pose list, or the 26-view rig around the bounding box.
pub fn cameras(cfg: &RunConfig, image_res: usize) -> Result<Vec<Camera<f64>>, CliError> {
    let s = &cfg.scene;
    match &s.cameras {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let poses = parse_pose_list::<f64>(&text)
                .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
            if poses.is_empty() {
                return Err(CliError::Validation(format!("{}: no camera poses", path.display())));
            }
            poses
                .into_iter()
                .map(|p| Camera::new(p, cfg.fov(), image_res, image_res).map_err(CliError::from))
                .collect()
        }
        None => {
            let half = s.bbox_extent / 2.0;
            let o = s.bbox_origin;
            let center = Vec3::new(o[0] + half, o[1] + half, o[2] + half);
            Ok(canonical_rig(center, half, s.camera_distance, cfg.fov(), image_res)?)
        }
    }
}

fn write_views(images: &[Image<f64>], out: &Path) -> Result<(), CliError> {
    create_dir(out)?;
    for (i, img) in images.iter().enumerate() {
        img.write_pfm(&out.join(format!("{}.pfm", view_name(i))))?;
        img.write_png(&out.join(format!("{}.png", view_name(i))))?;
    }
    Ok(())
}

fn render_views(cfg: &RunConfig, grid: &SdfGrid<f64>, image_res: usize) -> Result<Vec<Image<f64>>, CliError> {
    let params = cfg.trace_factors().params_for(grid);
    let light = cfg.light();
    Ok(cameras(cfg, image_res)?
        .iter()
        .map(|c| render(grid, c, &Light::headlight(c, &light), &params, false).image)
        .collect())
}

/// Renders every camera view of a stored grid.
pub fn cmd_render(cfg: &RunConfig, grid_path: &Path, out: &Path) -> Result<usize, CliError> {
    let grid = read_grid::<f64>(grid_path)?;
    let res = match cfg.render.image_res {
        Some(r) => r,
        None => image_res_for(grid.geometry(), cfg.scene.camera_distance, cfg.fov(), cfg.image_limits()),
    };
    let images = render_views(cfg, &grid, res)?;
    write_views(&images, out)?;
    info!("rendered {} views at {res}x{res} into {}", images.len(), out.display());
    Ok(images.len())
}

/// Writes an analytic target grid, its mesh and its rendered views.
pub fn cmd_make_target(cfg: &RunConfig, out: &Path) -> Result<PathBuf, CliError> {
    let t = &cfg.target;
    let geo = cfg.geometry(t.resolution)?;
    let center = Vec3::new(t.center[0], t.center[1], t.center[2]);
    let grid = match t.shape {
        Shape::Sphere => init_sphere(t.resolution, center, t.radius, geo.origin(), geo.spacing())?,
        Shape::Torus => init_torus(
            t.resolution,
            center,
            t.major_radius,
            t.minor_radius,
            geo.origin(),
            geo.spacing(),
        )?,
    };
    // by default targets match the last reconstruction stage
    let res = match t.image_res {
        Some(r) => r,
        None => {
            let rc = cfg.reconstruction()?;
            rc.image_res(*rc.grid_resolutions.last().expect("validated schedule"))?
        }
    };
    create_dir(out)?;
    let grid_path = out.join("target.sdfg");
    write_grid(&grid, &grid_path)?;
    marching_cubes(&grid, 0.0).write_obj(&out.join("target.obj"))?;
    write_views(&render_views(cfg, &grid, res)?, out)?;
    info!("wrote {:?} target at {}^3 and views at {res}px to {}", t.shape, t.resolution, out.display());
    Ok(grid_path)
}

#[derive(Serialize)]
struct LossRow {
    iteration: usize,
    stage: usize,
    view: Option<usize>,
    image_loss: f64,
    reg_loss: f64,
    geo_loss: f64,
    total: f64,
}

/// Streams loss rows to CSV and writes stage checkpoints.
struct RunLog {
    csv: csv::Writer<fs::File>,
    csv_path: PathBuf,
    checkpoints: Option<PathBuf>,
    error: Option<CliError>,
}

impl RunLog {
    fn keep(&mut self, r: Result<(), CliError>) {
        if let Err(e) = r {
            self.error.get_or_insert(e);
        }
    }
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    let msg = e.to_string();
    match e.into_kind() {
        csv::ErrorKind::Io(source) => CliError::io(path, source),
        _ => CliError::Validation(format!("{}: {msg}", path.display())),
    }
}

impl Observer<f64> for RunLog {
    fn iteration(&mut self, r: &IterationRecord<f64>) {
        let row = LossRow {
            iteration: r.iteration,
            stage: r.stage,
            view: r.view,
            image_loss: r.image_loss,
            reg_loss: r.reg_loss,
            geo_loss: r.geo_loss,
            total: r.total,
        };
        let res = self.csv.serialize(row).map_err(|e| csv_error(&self.csv_path, e));
        self.keep(res);
        if r.view.is_none() {
            info!(
                "stage {} iteration {}: image {:.6e} total {:.6e}",
                r.stage, r.iteration, r.image_loss, r.total
            );
        }
    }

    fn stage_end(&mut self, s: &StageSummary<f64>, grid: &SdfGrid<f64>, adam: &AdamState<f64>) {
        info!(
            "stage {} done: {}^3, {} updates, {:?}",
            s.stage, s.resolution, s.updates, s.stop_reason
        );
        let flushed = self.csv.flush().map_err(|e| CliError::io(&self.csv_path, e));
        self.keep(flushed);
        if let Some(dir) = &self.checkpoints {
            let base = dir.join(format!("stage_{}", s.stage));
            let res = write_grid(grid, &base.with_extension("sdfg"))
                .and_then(|_| write_adam(adam, &base.with_extension("adam")))
                .map_err(CliError::from);
            self.keep(res);
        }
    }
}

/// Inputs of a reconstruction, resolved and loaded before any optimization.
pub enum Targets {
    GroundTruth(SdfGrid<f64>),
    Images(Vec<Image<f64>>),
}

pub fn load_targets(cfg: &RunConfig) -> Result<Targets, CliError> {
    match (&cfg.reconstruct.ground_truth, &cfg.reconstruct.targets) {
        (Some(_), Some(_)) => Err(CliError::Validation(
            "give either a ground-truth grid or a target directory, not both".into(),
        )),
        (None, None) => Err(CliError::Validation(
            "reconstruct needs a ground-truth grid or a target directory".into(),
        )),
        (Some(gt), None) => Ok(Targets::GroundTruth(read_grid(gt)?)),
        (None, Some(dir)) => {
            let n = cameras(cfg, 1)?.len();
            let mut images = Vec::with_capacity(n);
            for i in 0..n {
                let path = dir.join(format!("{}.pfm", view_name(i)));
                if !path.is_file() {
                    return Err(CliError::Validation(format!("missing target image {}", path.display())));
                }
                images.push(Image::read_pfm(&path)?);
            }
            Ok(Targets::Images(images))
        }
    }
}

pub fn cmd_reconstruct(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let rc = cfg.reconstruction()?;
    let targets = load_targets(cfg)?;
    let poses: Vec<_> = cameras(cfg, 1)?.iter().map(|c| *c.pose()).collect();

    create_dir(out)?;
    let csv_path = out.join("losses.csv");
    let file = fs::File::create(&csv_path).map_err(|e| CliError::io(&csv_path, e))?;
    let checkpoints = if cfg.optim.checkpoints {
        let dir = out.join("checkpoints");
        create_dir(&dir)?;
        Some(dir)
    } else {
        None
    };
    let mut log = RunLog {
        csv: csv::Writer::from_writer(file),
        csv_path,
        checkpoints,
        error: None,
    };

    info!("seed {}, schedule {:?}", cfg.seed, rc.grid_resolutions);
    let started = Instant::now();
    let source = match &targets {
        Targets::GroundTruth(g) => TargetSource::GroundTruth(g),
        Targets::Images(imgs) => TargetSource::Images(imgs),
    };
    let result = reconstruct_multires(&rc, &poses, source, &mut log);
    let elapsed = started.elapsed().as_secs_f64();
    log.csv.flush().map_err(|e| CliError::io(&log.csv_path, e))?;
    if let Some(e) = log.error.take() {
        return Err(e);
    }

    let mut summary = String::new();
    let _ = writeln!(summary, "seed: {}", cfg.seed);
    let _ = writeln!(summary, "schedule: {:?}", rc.grid_resolutions);
    let rec = match result {
        Ok(rec) => rec,
        Err(fail) => {
            if let Some(partial) = &fail.partial {
                write_grid(partial, &out.join("partial.sdfg"))?;
            }
            let _ = writeln!(summary, "status: failed");
            let _ = writeln!(summary, "error: {}", fail.error);
            write_text(&out.join("summary.txt"), &summary)?;
            return Err(fail.error.into());
        }
    };

    write_grid(&rec.grid, &out.join("grid.sdfg"))?;
    let mesh = marching_cubes(&rec.grid, 0.0);
    mesh.write_obj(&out.join("mesh.obj"))?;

    let hausdorff = match &targets {
        Targets::GroundTruth(gt) => Some(hausdorff(cfg, &mesh, &marching_cubes(gt, 0.0))?),
        Targets::Images(_) => None,
    };

    let _ = writeln!(summary, "status: ok");
    for s in &rec.stages {
        let _ = writeln!(
            summary,
            "stage {}: grid {}^3, image {}px, iterations {}, updates {}, stop {:?}, image loss {:.6e} -> {:.6e}, total {:.6e} -> {:.6e}",
            s.stage,
            s.resolution,
            s.image_res,
            s.outer_iterations,
            s.updates,
            s.stop_reason,
            s.initial.image_loss,
            s.last.image_loss,
            s.initial.total,
            s.last.total
        );
    }
    let _ = writeln!(summary, "total updates: {}", rec.total_updates);
    let _ = writeln!(summary, "final image loss: {:.6e}", rec.final_image_loss());
    let _ = writeln!(summary, "initial image loss: {:.6e}", rec.baseline_image_loss);
    let _ = writeln!(summary, "loss ratio: {:.6}", rec.loss_ratio());
    if let Some(h) = hausdorff {
        let _ = writeln!(summary, "relative symmetric hausdorff: {h:.6}");
    }
    let _ = writeln!(summary, "mesh: {} vertices, {} triangles", mesh.vertices.len(), mesh.triangles.len());
    let _ = writeln!(summary, "seconds: {elapsed:.1}");
    write_text(&out.join("summary.txt"), &summary)?;
    emit(&summary);

    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn hausdorff(cfg: &RunConfig, a: &TriangleMesh, b: &TriangleMesh) -> Result<f64, CliError> {
    let opts = HausdorffOptions {
        samples: cfg.evaluate.samples,
        seed: cfg.seed,
        box_edge: cfg.evaluate.box_edge,
    };
    Ok(symmetric_hausdorff(a, b, &opts)?)
}

/// Prints per-family errors; fails when any family does.
pub fn cmd_gradcheck(cfg: &RunConfig) -> Result<(), CliError> {
    let gc = cfg.gradcheck_config();
    if gc.n_pixels == 0 {
        warn!("gradcheck with zero pixels checks nothing");
    }
    let report = sdftrace::gradcheck::run(&gc)?;
    let mut text = format!(
        "pixels: {} (skipped near the shading kink: {})\n",
        report.pixels, report.skipped_near_kink
    );
    for f in &report.families {
        let _ = writeln!(
            text,
            "{:<16} entries {:>8}  max rel err {:.3e}  max abs err (small) {:.3e}  failures {}  {}",
            f.name,
            f.entries,
            f.max_rel_err,
            f.max_abs_err_small,
            f.failures,
            if f.passed() { "PASS" } else { "FAIL" }
        );
    }
    let passed = report.passed();
    let _ = writeln!(text, "gradcheck: {}", if passed { "PASS" } else { "FAIL" });
    emit(&text);
    if passed {
        Ok(())
    } else {
        Err(CliError::Numeric("gradient check failed".into()))
    }
}

#[derive(Serialize)]
struct EvaluateRow<'a> {
    mesh_a: &'a str,
    mesh_b: &'a str,
    samples: usize,
    seed: u64,
    value: f64,
}

/// Relative symmetric Hausdorff distance of two OBJ meshes, optionally also
/// written as a one-row CSV file.
pub fn cmd_evaluate(cfg: &RunConfig, a: &Path, b: &Path, csv_path: Option<&Path>) -> Result<f64, CliError> {
    let ma = TriangleMesh::read_obj(a)?;
    let mb = TriangleMesh::read_obj(b)?;
    let value = hausdorff(cfg, &ma, &mb)?;
    emit(&format!("{value:.9}\n"));
    if let Some(path) = csv_path {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            create_dir(dir)?;
        }
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        let (sa, sb) = (a.display().to_string(), b.display().to_string());
        w.serialize(EvaluateRow {
            mesh_a: &sa,
            mesh_b: &sb,
            samples: cfg.evaluate.samples,
            seed: cfg.seed,
            value,
        })
        .map_err(|e| csv_error(path, e))?;
        w.flush().map_err(|e| CliError::io(path, e))?;
    }
    Ok(value)
}
