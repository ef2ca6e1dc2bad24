use sdftrace::loss::total_loss;
use sdftrace::optim::{
    adam_step, optimize_stage, IterationRecord, Observer, StageSummary, StopReason, ViewLoop, ViewSet,
};
use sdftrace::{
    canonical_rig, init_torus, reconstruct_multires, render, AdamState, CameraPose, ReconstructionConfig,
    SchedulePolicy, SdfGrid, TargetSource, Vec3,
};

fn poses(cfg: &ReconstructionConfig<f64>) -> Vec<CameraPose<f64>> {
    canonical_rig(Vec3::zero(), 0.5, cfg.camera_distance, cfg.fov, 16)
        .unwrap()
        .iter()
        .map(|c| *c.pose())
        .collect()
}

fn torus(n: usize) -> SdfGrid<f64> {
    init_torus(n, Vec3::zero(), 0.3, 0.12, Vec3::splat(-0.5), 1.0 / (n - 1) as f64).unwrap()
}

#[derive(Default)]
struct Record {
    loops: Vec<(usize, ViewLoop<f64>)>,
    rows: Vec<IterationRecord<f64>>,
    stage_boxes: Vec<(Vec3<f64>, f64)>,
    summaries: Vec<StageSummary<f64>>,
}

impl Observer<f64> for Record {
    fn iteration(&mut self, r: &IterationRecord<f64>) {
        self.rows.push(r.clone());
    }
    fn view_loop(&mut self, stage: usize, outcome: &ViewLoop<f64>) {
        self.loops.push((stage, outcome.clone()));
    }
    fn stage_end(&mut self, s: &StageSummary<f64>, grid: &SdfGrid<f64>, _adam: &AdamState<f64>) {
        self.stage_boxes.push((grid.geometry().origin(), grid.geometry().extent()));
        self.summaries.push(s.clone());
    }
}

#[test]
fn targets_from_the_initial_grid_are_a_fixed_point() {
    // regularizers off: the sampled sphere is not stationary for them
    let mut cfg = ReconstructionConfig::<f64> {
        grid_resolutions: vec![16],
        ..Default::default()
    };
    cfg.weights.lambda_reg = 0.0;
    cfg.weights.lambda_geo = 0.0;
    let start = cfg.initial_grid().unwrap();
    let rec = reconstruct_multires(&cfg, &poses(&cfg), TargetSource::GroundTruth(&start), &mut ()).unwrap();
    let s = &rec.stages[0];
    assert_eq!(s.stop_reason, StopReason::Converged);
    assert_eq!(s.updates, 0);
    assert_eq!(s.initial.image_loss, 0.0);
    assert_eq!(rec.grid, start);
}

#[test]
fn unit_budgets_on_one_view_are_plain_adam() {
    let mut cfg = ReconstructionConfig::<f64> {
        grid_resolutions: vec![12],
        max_outer_iterations: 5,
        ..Default::default()
    };
    cfg.policy = SchedulePolicy {
        fixed_budget: Some(1),
        ..SchedulePolicy::default()
    };
    cfg.loss_tolerance_factor = 0.0;
    cfg.min_step_norm_factor = 0.0;
    let pose = poses(&cfg)[3];
    let res = cfg.image_res(12).unwrap();
    let views = ViewSet::headlit(&[pose], cfg.fov, res, &cfg.light).unwrap();
    let gt = torus(24);
    let targets = TargetSource::GroundTruth(&gt).targets_for(&views, &cfg.trace).unwrap();
    let settings = cfg.stage_settings(12, res, None);

    let mut staged = cfg.initial_grid().unwrap();
    let mut adam = AdamState::new(12, cfg.adam).unwrap();
    let summary = optimize_stage(0, &mut staged, &mut adam, &views, &targets, &settings, &cfg.weights, &mut ()).unwrap();

    let mut plain = cfg.initial_grid().unwrap();
    let mut adam2 = AdamState::new(12, cfg.adam).unwrap();
    let trace = cfg.trace.params_for(&plain);
    for _ in 0..summary.updates {
        let rendered = render(&plain, &views.cameras[0], &views.lights[0], &trace, true);
        let (_, mut grad) = total_loss(&plain, &[rendered], &targets, &cfg.weights).unwrap();
        grad.zero_boundary();
        adam_step(&mut adam2, &mut plain, &grad).unwrap();
    }
    assert!(summary.updates >= 1);
    // same terms, summed in a different order
    for (a, b) in staged.values().iter().zip(plain.values()) {
        assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
    }
    assert_eq!(adam.step_count, adam2.step_count);
}

#[test]
fn short_reconstruction_keeps_its_invariants() {
    let cfg = ReconstructionConfig::<f64> {
        grid_resolutions: vec![8, 16],
        max_outer_iterations: 3,
        ..Default::default()
    };
    let gt = torus(32);
    let mut rec = Record::default();
    let out = reconstruct_multires(&cfg, &poses(&cfg), TargetSource::GroundTruth(&gt), &mut rec).unwrap();

    // a view loop either did not end above its entry loss or stopped after its first step
    for (_, l) in &rec.loops {
        assert!(l.recorded_loss <= l.entry_loss || l.steps == 1, "{l:?}");
    }
    for s in &rec.summaries {
        assert!(s.running_min.windows(2).all(|w| w[1] <= w[0]));
    }
    // the box never moves, bit for bit
    let first = rec.stage_boxes[0];
    assert!(rec.stage_boxes.iter().all(|b| *b == first));
    assert_eq!(out.grid.geometry().origin(), cfg.bbox_origin);

    // boundary samples keep their upsampled initial values
    let start = cfg.initial_grid().unwrap().upsample(16).unwrap();
    let n = 16;
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                if !out.grid.geometry().is_interior(i, j, k) {
                    assert_eq!(out.grid.value(i, j, k), start.value(i, j, k));
                }
            }
        }
    }
    // whole-stage rows carry no view id and come first in each stage
    assert!(rec.rows.iter().any(|r| r.view.is_none()));
    assert!(rec.rows.iter().all(|r| r.total.is_finite()));
}

#[test]
fn sphere_to_torus_at_sixteen_cubed() {
    let cfg = ReconstructionConfig::<f64> {
        grid_resolutions: vec![16],
        max_outer_iterations: 12,
        ..Default::default()
    };
    let gt = torus(64);
    let rec = reconstruct_multires(&cfg, &poses(&cfg), TargetSource::GroundTruth(&gt), &mut ()).unwrap();
    let s = &rec.stages[0];
    let ratio = s.last.image_loss / s.initial.image_loss;
    assert!(ratio < 0.1, "final/initial image loss {ratio}");
    assert_eq!(rec.baseline_image_loss, s.initial.image_loss);
}

#[test]
fn runaway_learning_rate_reports_divergence_with_a_partial_grid() {
    let mut cfg = ReconstructionConfig::<f64> {
        grid_resolutions: vec![8, 16],
        max_outer_iterations: 4,
        divergence_factor: 1.0 + 1e-9,
        ..Default::default()
    };
    cfg.adam.lr = 5.0;
    let gt = torus(32);
    let err = reconstruct_multires(&cfg, &poses(&cfg), TargetSource::GroundTruth(&gt), &mut ()).unwrap_err();
    assert!(matches!(err.error, sdftrace::Error::StageDiverged { .. }), "{}", err.error);
    assert!(err.partial.is_some());
}

#[test]
fn reconstruction_is_reproducible() {
    let cfg = ReconstructionConfig::<f64> {
        grid_resolutions: vec![8, 16],
        max_outer_iterations: 2,
        ..Default::default()
    };
    let gt = torus(32);
    let run = || reconstruct_multires(&cfg, &poses(&cfg), TargetSource::GroundTruth(&gt), &mut ()).unwrap().grid;
    assert_eq!(run(), run());
}
