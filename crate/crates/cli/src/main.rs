//! `sdftrace`: render stored grids, reconstruct shapes from views, check
//! gradients and compare meshes.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use crate::config::{RunConfig, Shape};
use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(name = "sdftrace", version, about = "Differentiable SDF sphere tracing and multi-view reconstruction")]
struct Cli {
    /// JSON run configuration; missing keys take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// One worker thread, for bit-identical reruns.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Print the configuration with every default filled in, then exit.
    #[arg(long, global = true)]
    print_effective_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render every camera view of a grid file.
    Render {
        /// Grid container file.
        grid: PathBuf,
        /// Square image size; derived from the grid spacing by default.
        #[arg(long)]
        image_res: Option<usize>,
    },
    /// Reconstruct a grid from target views, starting from a sphere.
    Reconstruct {
        /// Ground-truth grid, re-rendered at every stage.
        #[arg(long)]
        ground_truth: Option<PathBuf>,
        /// Directory of view_NN.pfm target images.
        #[arg(long)]
        targets: Option<PathBuf>,
    },
    /// Compare analytic shading and loss gradients with finite differences.
    Gradcheck {
        /// Hit pixels to check.
        #[arg(long)]
        pixels: Option<usize>,
    },
    /// Relative symmetric Hausdorff distance between two OBJ meshes.
    Evaluate {
        mesh_a: PathBuf,
        mesh_b: PathBuf,
        #[arg(long)]
        samples: Option<usize>,
        /// Also write mesh_a, mesh_b, samples, seed, value to this CSV file.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Write an analytic sphere or torus grid and its rendered views.
    MakeTarget {
        #[arg(long, value_parser = parse_shape)]
        shape: Option<Shape>,
        #[arg(long)]
        resolution: Option<usize>,
    },
}

fn parse_shape(s: &str) -> Result<Shape, String> {
    match s {
        "sphere" => Ok(Shape::Sphere),
        "torus" => Ok(Shape::Torus),
        _ => Err(format!("unknown shape {s:?}; expected sphere or torus")),
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            RunConfig::from_json(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    cfg.deterministic |= cli.deterministic;
    match &cli.command {
        Some(Command::Render { image_res, .. }) if image_res.is_some() => cfg.render.image_res = *image_res,
        Some(Command::Reconstruct { ground_truth, targets }) => {
            if ground_truth.is_some() || targets.is_some() {
                cfg.reconstruct.ground_truth = ground_truth.clone();
                cfg.reconstruct.targets = targets.clone();
            }
        }
        Some(Command::Gradcheck { pixels: Some(n) }) => cfg.gradcheck.n_pixels = *n,
        Some(Command::Evaluate { samples: Some(n), .. }) => cfg.evaluate.samples = *n,
        Some(Command::MakeTarget { shape, resolution }) => {
            if let Some(s) = shape {
                cfg.target.shape = *s;
            }
            if let Some(r) = resolution {
                cfg.target.resolution = *r;
            }
        }
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    if cli.print_effective_config {
        commands::emit(&format!("{}\n", cfg.to_json()));
        return Ok(());
    }
    let Some(command) = &cli.command else {
        return Err(CliError::Validation("no command given; see --help".into()));
    };
    if let Some(n) = cfg.effective_threads() {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Validation(format!("thread pool: {e}")))?;
    }
    info!("seed {}, threads {:?}", cfg.seed, cfg.effective_threads());
    let out: &Path = &cli.out;
    match command {
        Command::Render { grid, .. } => commands::cmd_render(&cfg, grid, out).map(|_| ()),
        Command::Reconstruct { .. } => commands::cmd_reconstruct(&cfg, out).map(|_| ()),
        Command::Gradcheck { .. } => commands::cmd_gradcheck(&cfg),
        Command::Evaluate { mesh_a, mesh_b, csv, .. } => {
            commands::cmd_evaluate(&cfg, mesh_a, mesh_b, csv.as_deref()).map(|_| ())
        }
        Command::MakeTarget { .. } => commands::cmd_make_target(&cfg, out).map(|_| ()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SDFTRACE_LOG", "info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
