//! Gradient-based shape optimization: Adam over grid samples, greedy per-view
//! scheduling, and the coarse-to-fine driver.

pub mod adam;
pub mod schedule;

pub use adam::{adam_step, AdamParams, AdamState};
pub use schedule::{schedule_views, schedule_views_with, SchedulePlan, SchedulePolicy};

use log::{debug, info, warn};

use crate::error::{Error, Result};
use crate::grid::{init_sphere, GradientBuffer, GridGeometry, SdfGrid};
use crate::loss::{backprop_image, image_loss, regularizers, LossReport, LossWeights};
use crate::raster::Image;
use crate::real::Real;
use crate::scene::{image_res_for, Camera, CameraPose, ImageResLimits, Light, LightParams};
use crate::shade::render;
use crate::tracer::TraceParams;
use crate::vec3::Vec3;

/// Tracer thresholds relative to the grid spacing of each level.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceFactors<T> {
    pub eps_factor: T,
    pub delta_factor: T,
    pub max_steps: usize,
}

impl<T: Real> Default for TraceFactors<T> {
    fn default() -> Self {
        Self {
            eps_factor: T::lit(1e-4),
            delta_factor: T::lit(1e-6),
            max_steps: 256,
        }
    }
}

impl<T: Real> TraceFactors<T> {
    pub fn params_for(&self, grid: &SdfGrid<T>) -> TraceParams<T> {
        TraceParams::scaled(grid.spacing(), self.eps_factor, self.delta_factor, self.max_steps)
    }
}

/// Cameras with their headlights, all at one image resolution.
#[derive(Clone, Debug)]
pub struct ViewSet<T> {
    pub cameras: Vec<Camera<T>>,
    pub lights: Vec<Light<T>>,
}

impl<T: Real> ViewSet<T> {
    pub fn headlit(poses: &[CameraPose<T>], fov: T, image_res: usize, light: &LightParams<T>) -> Result<Self> {
        let cameras = poses
            .iter()
            .map(|p| Camera::new(*p, fov, image_res, image_res))
            .collect::<Result<Vec<_>>>()?;
        let lights = cameras.iter().map(|c| Light::headlight(c, light)).collect();
        Ok(Self { cameras, lights })
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    /// Renders every view of `grid` without derivatives.
    pub fn render_all(&self, grid: &SdfGrid<T>, trace: &TraceParams<T>) -> Vec<Image<T>> {
        self.cameras
            .iter()
            .zip(&self.lights)
            .map(|(c, l)| render(grid, c, l, trace, false).image)
            .collect()
    }
}

/// Stopping rules and budgets for one resolution level.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StageSettings<T> {
    pub max_outer_iterations: usize,
    /// Stop once the summed loss falls below this.
    pub loss_tolerance: T,
    /// Stop once no update in an outer iteration moved the grid further than this.
    pub min_step_norm: T,
    pub policy: SchedulePolicy,
    /// Abort when the summed loss exceeds this multiple of the stage's initial loss.
    pub divergence_factor: T,
    /// Hold the outermost layer of samples fixed. No loss term anchors them.
    pub freeze_boundary: bool,
    /// Cap on Adam updates within the stage.
    pub max_updates: Option<usize>,
    pub trace: TraceFactors<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    Converged,
    StepTooSmall,
    MaxIterations,
    UpdateBudget,
}

/// One row of the optimization log. `view` is `None` for whole-stage evaluations.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord<T> {
    pub stage: usize,
    pub iteration: usize,
    pub view: Option<usize>,
    pub image_loss: T,
    pub reg_loss: T,
    pub geo_loss: T,
    pub total: T,
}

/// Outcome of the inner loop on one view.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewLoop<T> {
    pub view: usize,
    pub entry_loss: T,
    /// Loss of the last update that did not increase it; the first update's
    /// loss when that one already increased it.
    pub recorded_loss: T,
    pub steps: usize,
    pub increased: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageSummary<T> {
    pub stage: usize,
    pub resolution: usize,
    pub image_res: usize,
    pub initial: LossReport<T>,
    pub last: LossReport<T>,
    pub outer_iterations: usize,
    pub updates: usize,
    pub stop_reason: StopReason,
    /// Smallest summed loss seen so far, after each outer iteration.
    pub running_min: Vec<T>,
}

/// Hooks for logging and checkpointing.
pub trait Observer<T: Real> {
    fn iteration(&mut self, _record: &IterationRecord<T>) {}
    fn view_loop(&mut self, _stage: usize, _outcome: &ViewLoop<T>) {}
    fn stage_end(&mut self, _summary: &StageSummary<T>, _grid: &SdfGrid<T>, _adam: &AdamState<T>) {}
}

impl<T: Real> Observer<T> for () {}

/// Summed loss over all views, without derivatives.
pub fn evaluate_views<T: Real>(
    grid: &SdfGrid<T>,
    views: &ViewSet<T>,
    targets: &[Image<T>],
    weights: &LossWeights<T>,
    trace: &TraceParams<T>,
) -> Result<LossReport<T>> {
    if targets.len() != views.len() {
        return Err(Error::invalid(format!("{} views but {} targets", views.len(), targets.len())));
    }
    let rendered = views.render_all(grid, trace);
    let per_view = rendered
        .iter()
        .zip(targets)
        .map(|(r, t)| image_loss(r, t).map(|(l, _)| l))
        .collect::<Result<Vec<_>>>()?;
    let image = per_view.iter().fold(T::zero(), |a, &b| a + b);
    let (reg, geo, _) = regularizers(grid, weights)?;
    Ok(LossReport {
        image_loss: image,
        reg_loss: reg,
        geo_loss: geo,
        total: image + weights.lambda_reg * reg + weights.lambda_geo * geo,
        per_view_image_loss: per_view,
    })
}

/// Loss and gradient of one view's image term plus the regularizers.
struct ViewEval<T> {
    image: T,
    reg: T,
    geo: T,
    total: T,
    grad: GradientBuffer<T>,
}

fn evaluate_view<T: Real>(
    grid: &SdfGrid<T>,
    camera: &Camera<T>,
    light: &Light<T>,
    target: &Image<T>,
    weights: &LossWeights<T>,
    trace: &TraceParams<T>,
) -> Result<ViewEval<T>> {
    let out = render(grid, camera, light, trace, true);
    let (image, dl) = image_loss(&out.image, target)?;
    let (reg, geo, mut grad) = regularizers(grid, weights)?;
    backprop_image(&out.tapes, &dl, &mut grad);
    Ok(ViewEval {
        image,
        reg,
        geo,
        total: image + weights.lambda_reg * reg + weights.lambda_geo * geo,
        grad,
    })
}

/// Optimizes `grid` at its current resolution until a stopping rule fires.
///
/// On [`Error::StageDiverged`] the grid holds the state at the time of
/// divergence.
#[allow(clippy::too_many_arguments)]
pub fn optimize_stage<T: Real>(
    stage: usize,
    grid: &mut SdfGrid<T>,
    adam: &mut AdamState<T>,
    views: &ViewSet<T>,
    targets: &[Image<T>],
    settings: &StageSettings<T>,
    weights: &LossWeights<T>,
    observer: &mut dyn Observer<T>,
) -> Result<StageSummary<T>> {
    if views.is_empty() {
        return Err(Error::invalid("no views to optimize against"));
    }
    for (c, t) in views.cameras.iter().zip(targets) {
        if t.width() != c.width() || t.height() != c.height() {
            return Err(Error::invalid(format!(
                "target is {}x{} but the stage renders {}x{}",
                t.width(),
                t.height(),
                c.width(),
                c.height()
            )));
        }
    }
    let trace = settings.trace.params_for(grid);
    let image_res = views.cameras[0].width();
    let initial = evaluate_views(grid, views, targets, weights, &trace)?;
    let emit = |observer: &mut dyn Observer<T>, iteration: usize, r: &LossReport<T>| {
        observer.iteration(&IterationRecord {
            stage,
            iteration,
            view: None,
            image_loss: r.image_loss,
            reg_loss: r.reg_loss,
            geo_loss: r.geo_loss,
            total: r.total,
        })
    };
    emit(observer, 0, &initial);
    info!(
        "stage {stage}: resolution {} image {image_res}px, initial loss {:.6e}",
        grid.resolution(),
        initial.total.as_f64()
    );

    let mut summary = StageSummary {
        stage,
        resolution: grid.resolution(),
        image_res,
        initial: initial.clone(),
        last: initial.clone(),
        outer_iterations: 0,
        updates: 0,
        stop_reason: StopReason::MaxIterations,
        running_min: Vec::new(),
    };
    if initial.total < settings.loss_tolerance {
        summary.stop_reason = StopReason::Converged;
        return Ok(summary);
    }

    let mut running_min = initial.total;
    let budget_left = |updates: usize| settings.max_updates.is_none_or(|m| updates < m);

    'outer: for outer in 1..=settings.max_outer_iterations {
        let plan = schedule_views_with(&summary.last.per_view_image_loss, &settings.policy)?;
        let mut max_step = T::zero();
        for &view in &plan.view_order {
            if !budget_left(summary.updates) {
                break;
            }
            let (camera, light, target) = (&views.cameras[view], &views.lights[view], &targets[view]);
            let mut eval = evaluate_view(grid, camera, light, target, weights, &trace)?;
            let mut outcome = ViewLoop {
                view,
                entry_loss: eval.total,
                recorded_loss: eval.total,
                steps: 0,
                increased: false,
            };
            for _ in 0..plan.per_view_budget[view] {
                if plan.exit_below_average[view] && eval.image < plan.avg_loss {
                    break;
                }
                if !budget_left(summary.updates) {
                    break;
                }
                if settings.freeze_boundary {
                    eval.grad.zero_boundary();
                }
                let step = match adam_step(adam, grid, &eval.grad) {
                    Ok(step) => step,
                    Err(e @ Error::NonFiniteGradient(_)) => {
                        warn!("stage {stage} view {view}: skipping update ({e})");
                        break;
                    }
                    Err(e) => return Err(e),
                };
                summary.updates += 1;
                outcome.steps += 1;
                max_step = max_step.max(step);
                let prev_total = eval.total;
                eval = evaluate_view(grid, camera, light, target, weights, &trace)?;
                observer.iteration(&IterationRecord {
                    stage,
                    iteration: outer,
                    view: Some(view),
                    image_loss: eval.image,
                    reg_loss: eval.reg,
                    geo_loss: eval.geo,
                    total: eval.total,
                });
                if eval.total > prev_total {
                    outcome.increased = true;
                    if outcome.steps == 1 {
                        outcome.recorded_loss = eval.total;
                    }
                    break;
                }
                outcome.recorded_loss = eval.total;
            }
            observer.view_loop(stage, &outcome);
        }

        let report = evaluate_views(grid, views, targets, weights, &trace)?;
        emit(observer, outer, &report);
        debug!(
            "stage {stage} iteration {outer}: loss {:.6e}, max step {:.3e}",
            report.total.as_f64(),
            max_step.as_f64()
        );
        summary.outer_iterations = outer;
        running_min = running_min.min(report.total);
        summary.running_min.push(running_min);
        let total = report.total;
        summary.last = report;

        if !(total <= settings.divergence_factor * initial.total) {
            return Err(Error::StageDiverged {
                stage,
                loss: total.as_f64(),
                initial: initial.total.as_f64(),
                factor: settings.divergence_factor.as_f64(),
            });
        }
        if total < settings.loss_tolerance {
            summary.stop_reason = StopReason::Converged;
            break 'outer;
        }
        if max_step < settings.min_step_norm {
            summary.stop_reason = StopReason::StepTooSmall;
            break 'outer;
        }
        if !budget_left(summary.updates) {
            summary.stop_reason = StopReason::UpdateBudget;
            break 'outer;
        }
    }
    info!(
        "stage {stage} done after {} iterations / {} updates ({:?}): loss {:.6e}",
        summary.outer_iterations,
        summary.updates,
        summary.stop_reason,
        summary.last.total.as_f64()
    );
    Ok(summary)
}

/// Resolution schedule from `init` to `target` in `stages` geometric steps.
pub fn geometric_schedule(init: usize, target: usize, stages: usize) -> Result<Vec<usize>> {
    if stages == 0 || init < 2 || init > target || (stages > 1 && init == target) {
        return Err(Error::invalid(format!(
            "cannot build {stages} stages from {init} to {target}"
        )));
    }
    if stages == 1 {
        return Ok(vec![target]);
    }
    let ratio = (target as f64 / init as f64).powf(1.0 / (stages - 1) as f64);
    let mut out: Vec<usize> = (0..stages)
        .map(|s| (init as f64 * ratio.powi(s as i32)).round() as usize)
        .collect();
    out[stages - 1] = target;
    if out.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid(format!("schedule {out:?} is not strictly increasing")));
    }
    Ok(out)
}

/// Everything the coarse-to-fine reconstruction needs besides the targets.
#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructionConfig<T> {
    pub grid_resolutions: Vec<usize>,
    pub bbox_origin: Vec3<T>,
    pub bbox_extent: T,
    pub init_center: Vec3<T>,
    pub init_radius: T,
    pub camera_distance: T,
    pub fov: T,
    pub light: LightParams<T>,
    pub image_limits: ImageResLimits,
    /// Stage-0 Adam parameters.
    pub adam: AdamParams<T>,
    /// Learning-rate multiplier applied at every new stage.
    pub lr_decay: T,
    pub max_outer_iterations: usize,
    /// Stage loss tolerance per rendered pixel of one view.
    pub loss_tolerance_factor: T,
    /// Stage step tolerance per `N^{3/2}`.
    pub min_step_norm_factor: T,
    pub policy: SchedulePolicy,
    pub divergence_factor: T,
    pub freeze_boundary: bool,
    /// Cap on Adam updates over all stages.
    pub total_update_budget: Option<usize>,
    pub trace: TraceFactors<T>,
    pub weights: LossWeights<T>,
}

impl<T: Real> Default for ReconstructionConfig<T> {
    fn default() -> Self {
        Self {
            grid_resolutions: vec![8, 16, 32, 64],
            bbox_origin: Vec3::splat(T::lit(-0.5)),
            bbox_extent: T::one(),
            init_center: Vec3::zero(),
            init_radius: T::lit(0.4),
            camera_distance: T::lit(2.0),
            fov: T::lit(45f64.to_radians()),
            light: LightParams::default(),
            image_limits: ImageResLimits::default(),
            adam: AdamParams::default(),
            lr_decay: T::lit(0.5),
            max_outer_iterations: 6,
            loss_tolerance_factor: T::lit(1e-4),
            min_step_norm_factor: T::lit(1e-7),
            policy: SchedulePolicy::default(),
            divergence_factor: T::lit(10.0),
            freeze_boundary: true,
            total_update_budget: None,
            trace: TraceFactors::default(),
            weights: LossWeights::default(),
        }
    }
}

impl<T: Real> ReconstructionConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let r = &self.grid_resolutions;
        if r.is_empty() || r[0] < 2 || r.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid(format!(
                "grid resolutions {r:?} must be strictly increasing and start at >= 2"
            )));
        }
        if !(self.lr_decay > T::zero()) {
            return Err(Error::invalid("learning-rate decay must be positive"));
        }
        if !(self.divergence_factor > T::one()) {
            return Err(Error::invalid("divergence factor must exceed 1"));
        }
        if self.image_limits.min == 0 || self.image_limits.min > self.image_limits.max {
            return Err(Error::invalid("image resolution limits are inconsistent"));
        }
        if self.max_outer_iterations == 0 {
            return Err(Error::invalid("max outer iterations must be positive"));
        }
        let geo = self.geometry(r[0])?;
        let half = self.bbox_extent * T::lit(0.5);
        if !(self.camera_distance > half * T::lit(3.0).sqrt()) {
            return Err(Error::invalid("camera distance must place the box in front of every camera"));
        }
        init_sphere(r[0], self.init_center, self.init_radius, geo.origin(), geo.spacing())?;
        AdamState::new(2, self.adam)?;
        Ok(())
    }

    pub fn geometry(&self, resolution: usize) -> Result<GridGeometry<T>> {
        GridGeometry::from_extent(resolution, self.bbox_origin, self.bbox_extent)
    }

    /// Image resolution used at a given grid resolution.
    pub fn image_res(&self, resolution: usize) -> Result<usize> {
        Ok(image_res_for(&self.geometry(resolution)?, self.camera_distance, self.fov, self.image_limits))
    }

    pub fn stage_settings(&self, resolution: usize, image_res: usize, max_updates: Option<usize>) -> StageSettings<T> {
        let pixels = T::from_usize_lossy(image_res * image_res);
        StageSettings {
            max_outer_iterations: self.max_outer_iterations,
            loss_tolerance: self.loss_tolerance_factor * pixels,
            min_step_norm: self.min_step_norm_factor * T::from_usize_lossy(resolution).powf(T::lit(1.5)),
            policy: self.policy,
            divergence_factor: self.divergence_factor,
            freeze_boundary: self.freeze_boundary,
            max_updates,
            trace: self.trace,
        }
    }

    /// The initial sphere at the first resolution.
    pub fn initial_grid(&self) -> Result<SdfGrid<T>> {
        let geo = self.geometry(self.grid_resolutions[0])?;
        init_sphere(geo.resolution(), self.init_center, self.init_radius, geo.origin(), geo.spacing())
    }
}

/// Where per-stage target images come from.
#[derive(Clone, Copy, Debug)]
pub enum TargetSource<'a, T> {
    /// Re-rendered at every stage's image resolution.
    GroundTruth(&'a SdfGrid<T>),
    /// Fixed images, box-filtered to each stage's resolution.
    Images(&'a [Image<T>]),
}

impl<T: Real> TargetSource<'_, T> {
    pub fn targets_for(&self, views: &ViewSet<T>, trace: &TraceFactors<T>) -> Result<Vec<Image<T>>> {
        match self {
            TargetSource::GroundTruth(gt) => Ok(views.render_all(gt, &trace.params_for(gt))),
            TargetSource::Images(images) => {
                if images.len() != views.len() {
                    return Err(Error::invalid(format!(
                        "{} target images for {} views",
                        images.len(),
                        views.len()
                    )));
                }
                images
                    .iter()
                    .zip(&views.cameras)
                    .map(|(img, cam)| img.resample_box(cam.width(), cam.height()))
                    .collect()
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Reconstruction<T> {
    pub grid: SdfGrid<T>,
    pub stages: Vec<StageSummary<T>>,
    pub total_updates: usize,
    /// Image loss of the initial sphere, upsampled to the final resolution
    /// and rendered with the final stage's views and targets.
    pub baseline_image_loss: T,
}

impl<T: Real> Reconstruction<T> {
    pub fn final_image_loss(&self) -> T {
        self.stages.last().map_or(T::zero(), |s| s.last.image_loss)
    }

    /// Final image loss over the baseline; both at the same image resolution.
    pub fn loss_ratio(&self) -> T {
        if self.baseline_image_loss > T::zero() {
            self.final_image_loss() / self.baseline_image_loss
        } else {
            T::zero()
        }
    }
}

/// Failed reconstruction with the grid reached so far.
#[derive(Debug)]
pub struct ReconstructFailure<T> {
    pub error: Error,
    pub partial: Option<SdfGrid<T>>,
    pub stages: Vec<StageSummary<T>>,
}

impl<T> From<Error> for ReconstructFailure<T> {
    fn from(error: Error) -> Self {
        Self {
            error,
            partial: None,
            stages: Vec::new(),
        }
    }
}

/// Coarse-to-fine reconstruction starting from a sphere.
pub fn reconstruct_multires<T: Real>(
    cfg: &ReconstructionConfig<T>,
    poses: &[CameraPose<T>],
    targets: TargetSource<'_, T>,
    observer: &mut dyn Observer<T>,
) -> std::result::Result<Reconstruction<T>, ReconstructFailure<T>> {
    cfg.validate()?;
    if poses.is_empty() {
        return Err(Error::invalid("no camera poses").into());
    }
    let mut grid = cfg.initial_grid()?;
    let mut stages = Vec::new();
    let mut total_updates = 0usize;
    let n_stages = cfg.grid_resolutions.len();
    let mut last_stage = None;

    for (stage, &resolution) in cfg.grid_resolutions.iter().enumerate() {
        if stage > 0 {
            grid = grid.upsample(resolution)?;
        }
        let image_res = cfg.image_res(resolution)?;
        let views = ViewSet::headlit(poses, cfg.fov, image_res, &cfg.light)?;
        let stage_targets = targets.targets_for(&views, &cfg.trace)?;

        let mut params = cfg.adam;
        params.lr *= cfg.lr_decay.powi(stage as i32);
        let mut adam = AdamState::new(resolution, params)?;

        let max_updates = cfg.total_update_budget.map(|b| {
            // spread what is left evenly over the remaining stages
            let left = b.saturating_sub(total_updates);
            left.div_ceil(n_stages - stage)
        });
        let settings = cfg.stage_settings(resolution, image_res, max_updates);
        match optimize_stage(stage, &mut grid, &mut adam, &views, &stage_targets, &settings, &cfg.weights, observer) {
            Ok(summary) => {
                total_updates += summary.updates;
                observer.stage_end(&summary, &grid, &adam);
                stages.push(summary);
                last_stage = Some((views, stage_targets));
            }
            Err(error) => {
                return Err(ReconstructFailure {
                    error,
                    partial: Some(grid),
                    stages,
                })
            }
        }
    }
    let baseline_image_loss = match last_stage {
        Some((views, targets)) => {
            let mut start = cfg.initial_grid()?;
            if start.resolution() < grid.resolution() {
                start = start.upsample(grid.resolution())?;
            }
            let rendered = views.render_all(&start, &cfg.trace.params_for(&start));
            let mut sum = T::zero();
            for (r, t) in rendered.iter().zip(&targets) {
                sum += image_loss(r, t)?.0;
            }
            sum
        }
        None => T::zero(),
    };
    Ok(Reconstruction {
        grid,
        stages,
        total_updates,
        baseline_image_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometric_schedules() {
        assert_eq!(geometric_schedule(8, 64, 4).unwrap(), vec![8, 16, 32, 64]);
        assert_eq!(geometric_schedule(48, 64, 4).unwrap(), vec![48, 53, 58, 64]);
        assert_eq!(geometric_schedule(8, 64, 1).unwrap(), vec![64]);
        assert!(geometric_schedule(62, 64, 4).is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = ReconstructionConfig::<f64>::default();
        assert!(cfg.validate().is_ok());
        cfg.grid_resolutions = vec![16, 8];
        assert!(cfg.validate().is_err());
        let cfg = ReconstructionConfig::<f64> {
            camera_distance: 0.5,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn stage_tolerances_scale() {
        let cfg = ReconstructionConfig::<f64>::default();
        let s = cfg.stage_settings(64, 100, None);
        assert!((s.loss_tolerance - 1.0).abs() < 1e-12);
        assert!((s.min_step_norm - 1e-7 * 512.0).abs() < 1e-15);
    }
}
