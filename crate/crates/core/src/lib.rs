//! Differentiable sphere tracing of signed distance fields sampled on a
//! regular grid, and multi-view shape reconstruction by gradient descent.
//!
//! The numeric core is generic over [`Real`] (`f32` or `f64`); the aliases at
//! the crate root fix it to one precision.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod container;
pub mod error;
pub mod gradcheck;
pub mod eval;
pub mod grid;
pub mod loss;
pub mod optim;
pub mod raster;
pub mod real;
pub mod scene;
pub mod shade;
pub mod tracer;
pub mod vec3;

pub use error::{Error, Result};
pub use grid::{init_sphere, init_torus, sphere_sdf, torus_sdf, GradientBuffer, GridGeometry, SdfGrid};
pub use loss::{EikonalForm, LossReport, LossWeights, NarrowBand};
pub use optim::{
    reconstruct_multires, AdamParams, AdamState, Reconstruction, ReconstructionConfig, SchedulePolicy, TargetSource,
};
pub use raster::Image;
pub use real::Real;
pub use scene::{canonical_rig, Camera, CameraPose, Light, LightParams, Ray};
pub use shade::{render, PixelTape, Rendered};
pub use tracer::{sphere_trace, HitRecord, Trace, TraceParams};
pub use vec3::Vec3;

pub type Vec3d = Vec3<f64>;
pub type Vec3f = Vec3<f32>;
pub type SdfGridF64 = SdfGrid<f64>;
pub type SdfGridF32 = SdfGrid<f32>;
pub type ImageF64 = Image<f64>;
pub type ImageF32 = Image<f32>;
pub type CameraF64 = Camera<f64>;
