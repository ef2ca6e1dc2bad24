use std::path::PathBuf;

use sdftrace::gradcheck::GradcheckConfig;
use sdftrace::optim::TraceFactors;
use sdftrace::scene::ImageResLimits;
use sdftrace::{
    AdamParams, EikonalForm, GridGeometry, LightParams, LossWeights, ReconstructionConfig, SchedulePolicy, Vec3,
};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Everything a run can be configured with. Missing keys take defaults,
/// unknown keys are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seed for every random choice (pixel sampling, surface sampling, noise).
    pub seed: u64,
    /// Worker threads; `None` uses one per core.
    pub threads: Option<usize>,
    /// Single worker thread for bit-reproducible runs.
    pub deterministic: bool,
    pub scene: SceneConfig,
    pub trace: TraceConfig,
    pub loss: LossConfig,
    pub optim: OptimConfig,
    pub render: RenderConfig,
    pub reconstruct: ReconstructInputs,
    pub target: TargetConfig,
    pub gradcheck: GradcheckSettings,
    pub evaluate: EvaluateConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub bbox_origin: [f64; 3],
    pub bbox_extent: f64,
    pub camera_distance: f64,
    pub fov_degrees: f64,
    pub light: LightConfig,
    pub min_image_res: usize,
    pub max_image_res: usize,
    /// Pose list (position, look-at, up per line) replacing the 26-view rig.
    pub cameras: Option<PathBuf>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        let limits = ImageResLimits::default();
        Self {
            bbox_origin: [-0.5; 3],
            bbox_extent: 1.0,
            camera_distance: 2.0,
            fov_degrees: 45.0,
            light: LightConfig::default(),
            min_image_res: limits.min,
            max_image_res: limits.max,
            cameras: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LightConfig {
    pub intensity: f64,
    pub ambient: f64,
    pub albedo: f64,
}

impl Default for LightConfig {
    fn default() -> Self {
        let p = LightParams::<f64>::default();
        Self {
            intensity: p.intensity,
            ambient: p.ambient,
            albedo: p.albedo,
        }
    }
}

/// Tracer thresholds in units of the grid spacing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceConfig {
    pub eps_factor: f64,
    pub delta_factor: f64,
    pub max_steps: usize,
}

impl Default for TraceConfig {
    fn default() -> Self {
        let t = TraceFactors::<f64>::default();
        Self {
            eps_factor: t.eps_factor,
            delta_factor: t.delta_factor,
            max_steps: t.max_steps,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda_reg: f64,
    pub lambda_geo: f64,
    /// Narrow band half-width in grid spacings.
    pub mu: f64,
    pub mask: bool,
    pub eikonal_form: EikonalForm,
}

impl Default for LossConfig {
    fn default() -> Self {
        let w = LossWeights::<f64>::default();
        Self {
            lambda_reg: w.lambda_reg,
            lambda_geo: w.lambda_geo,
            mu: w.mu,
            mask: w.use_mask,
            eikonal_form: w.eikonal_form,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub grid_resolutions: Vec<usize>,
    pub init_center: [f64; 3],
    pub init_radius: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub lr_decay: f64,
    pub max_outer_iterations: usize,
    pub loss_tolerance_factor: f64,
    pub min_step_norm_factor: f64,
    pub divergence_factor: f64,
    pub above_average_budget: usize,
    pub default_budget: usize,
    pub fixed_budget: Option<usize>,
    pub total_update_budget: Option<usize>,
    pub freeze_boundary: bool,
    /// Write grid and Adam state after every stage.
    pub checkpoints: bool,
}

impl Default for OptimConfig {
    fn default() -> Self {
        let c = ReconstructionConfig::<f64>::default();
        Self {
            grid_resolutions: c.grid_resolutions,
            init_center: c.init_center.to_array(),
            init_radius: c.init_radius,
            lr: c.adam.lr,
            beta1: c.adam.beta1,
            beta2: c.adam.beta2,
            adam_eps: c.adam.eps,
            lr_decay: c.lr_decay,
            max_outer_iterations: c.max_outer_iterations,
            loss_tolerance_factor: c.loss_tolerance_factor,
            min_step_norm_factor: c.min_step_norm_factor,
            divergence_factor: c.divergence_factor,
            above_average_budget: c.policy.above_average_budget,
            default_budget: c.policy.default_budget,
            fixed_budget: c.policy.fixed_budget,
            total_update_budget: c.total_update_budget,
            freeze_boundary: c.freeze_boundary,
            checkpoints: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    /// Fixed image size; by default derived from the grid spacing.
    pub image_res: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructInputs {
    /// Grid re-rendered at every stage's image size.
    pub ground_truth: Option<PathBuf>,
    /// Directory of `view_NN.pfm` targets, one per camera.
    pub targets: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Sphere,
    Torus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetConfig {
    pub shape: Shape,
    pub resolution: usize,
    pub center: [f64; 3],
    /// Sphere radius.
    pub radius: f64,
    pub major_radius: f64,
    pub minor_radius: f64,
    /// Image size of the rendered views; by default derived from `resolution`.
    pub image_res: Option<usize>,
}

impl Default for TargetConfig {
    fn default() -> Self {
        Self {
            shape: Shape::Torus,
            resolution: 64,
            center: [0.0; 3],
            radius: 0.3,
            major_radius: 0.3,
            minor_radius: 0.12,
            image_res: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckSettings {
    pub n_pixels: usize,
    pub resolution: usize,
    pub image_res: usize,
    pub step: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub noise: f64,
    pub loss_samples: usize,
}

impl Default for GradcheckSettings {
    fn default() -> Self {
        let g = GradcheckConfig::default();
        Self {
            n_pixels: g.n_pixels,
            resolution: g.resolution,
            image_res: g.image_res,
            step: g.step,
            rel_tol: g.rel_tol,
            abs_tol: g.abs_tol,
            noise: g.noise,
            loss_samples: g.loss_samples,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub samples: usize,
    /// Hausdorff distances are divided by this length.
    pub box_edge: f64,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        let o = sdftrace::eval::HausdorffOptions::default();
        Self {
            samples: o.samples,
            box_edge: o.box_edge,
        }
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

fn vec3(a: [f64; 3]) -> Vec3<f64> {
    Vec3::new(a[0], a[1], a[2])
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| invalid(format!("config: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Worker count after the deterministic switch.
    pub fn effective_threads(&self) -> Option<usize> {
        if self.deterministic {
            Some(1)
        } else {
            self.threads
        }
    }

    /// Checks every section, so that bad input fails before any compute.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.threads == Some(0) {
            return Err(invalid("threads must be at least 1"));
        }
        self.reconstruction()?.validate().map_err(CliError::from)?;
        let s = &self.scene;
        if s.min_image_res == 0 || s.min_image_res > s.max_image_res {
            return Err(invalid("image resolution limits must satisfy 0 < min <= max"));
        }
        if let Some(r) = self.render.image_res {
            if r == 0 {
                return Err(invalid("render.image_res must be positive"));
            }
        }
        let t = &self.target;
        if t.resolution < 2 {
            return Err(invalid("target.resolution must be at least 2"));
        }
        match t.shape {
            Shape::Sphere if !(t.radius > 0.0) => return Err(invalid("target.radius must be positive")),
            Shape::Torus if !(t.major_radius > 0.0 && t.minor_radius > 0.0) => {
                return Err(invalid("torus radii must be positive"))
            }
            _ => {}
        }
        if t.image_res == Some(0) {
            return Err(invalid("target.image_res must be positive"));
        }
        let g = &self.gradcheck;
        if g.resolution < 4 || g.image_res == 0 || !(g.step > 0.0) || !(g.rel_tol > 0.0) || !(g.abs_tol >= 0.0) {
            return Err(invalid(
                "gradcheck needs resolution >= 4, a positive image size, step and rel_tol",
            ));
        }
        if self.evaluate.samples < sdftrace::eval::MIN_HAUSDORFF_SAMPLES {
            return Err(invalid(format!(
                "evaluate.samples must be at least {}",
                sdftrace::eval::MIN_HAUSDORFF_SAMPLES
            )));
        }
        if !(self.evaluate.box_edge > 0.0) {
            return Err(invalid("evaluate.box_edge must be positive"));
        }
        Ok(())
    }

    pub fn fov(&self) -> f64 {
        self.scene.fov_degrees.to_radians()
    }

    pub fn light(&self) -> LightParams<f64> {
        let l = &self.scene.light;
        LightParams {
            intensity: l.intensity,
            ambient: l.ambient,
            albedo: l.albedo,
        }
    }

    pub fn trace_factors(&self) -> TraceFactors<f64> {
        TraceFactors {
            eps_factor: self.trace.eps_factor,
            delta_factor: self.trace.delta_factor,
            max_steps: self.trace.max_steps,
        }
    }

    pub fn image_limits(&self) -> ImageResLimits {
        ImageResLimits {
            min: self.scene.min_image_res,
            max: self.scene.max_image_res,
        }
    }

    pub fn geometry(&self, resolution: usize) -> Result<GridGeometry<f64>, CliError> {
        Ok(GridGeometry::from_extent(
            resolution,
            vec3(self.scene.bbox_origin),
            self.scene.bbox_extent,
        )?)
    }

    pub fn weights(&self) -> LossWeights<f64> {
        LossWeights {
            lambda_reg: self.loss.lambda_reg,
            lambda_geo: self.loss.lambda_geo,
            mu: self.loss.mu,
            use_mask: self.loss.mask,
            eikonal_form: self.loss.eikonal_form,
        }
    }

    pub fn reconstruction(&self) -> Result<ReconstructionConfig<f64>, CliError> {
        let o = &self.optim;
        let cfg = ReconstructionConfig {
            grid_resolutions: o.grid_resolutions.clone(),
            bbox_origin: vec3(self.scene.bbox_origin),
            bbox_extent: self.scene.bbox_extent,
            init_center: vec3(o.init_center),
            init_radius: o.init_radius,
            camera_distance: self.scene.camera_distance,
            fov: self.fov(),
            light: self.light(),
            image_limits: self.image_limits(),
            adam: AdamParams {
                lr: o.lr,
                beta1: o.beta1,
                beta2: o.beta2,
                eps: o.adam_eps,
            },
            lr_decay: o.lr_decay,
            max_outer_iterations: o.max_outer_iterations,
            loss_tolerance_factor: o.loss_tolerance_factor,
            min_step_norm_factor: o.min_step_norm_factor,
            policy: SchedulePolicy {
                above_average_budget: o.above_average_budget,
                default_budget: o.default_budget,
                fixed_budget: o.fixed_budget,
            },
            divergence_factor: o.divergence_factor,
            freeze_boundary: o.freeze_boundary,
            total_update_budget: o.total_update_budget,
            trace: self.trace_factors(),
            weights: self.weights(),
        };
        Ok(cfg)
    }

    pub fn gradcheck_config(&self) -> GradcheckConfig {
        let g = &self.gradcheck;
        GradcheckConfig {
            n_pixels: g.n_pixels,
            seed: self.seed,
            resolution: g.resolution,
            image_res: g.image_res,
            step: g.step,
            rel_tol: g.rel_tol,
            abs_tol: g.abs_tol,
            noise: g.noise,
            loss_samples: g.loss_samples,
            ..GradcheckConfig::default()
        }
    }
}
