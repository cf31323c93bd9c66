//! Optical-flow ground truth from ray-marched analytic volumes.
//!
//! The pipeline renders two views of a procedural density field, reprojects
//! depth into flow, scores each flow vector with credibility masks, composites
//! moving foreground slices on top and writes KITTI-style datasets. Numeric
//! code is generic over [`Real`]; the aliases below fix it to `f64` or `f32`.

// Negated float comparisons double as NaN rejection throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataio;
pub mod error;
pub mod evalmetrics;
pub mod flowgen;
pub mod foreground;
pub mod masks;
pub mod pipeline;
pub mod real;
pub mod render;
pub mod scene;
pub mod seed;

pub use error::{Error, Result};
pub use real::Real;

pub type SceneModelF64 = scene::SceneModel<f64>;
pub type SceneModelF32 = scene::SceneModel<f32>;
pub type CameraF64 = scene::Camera<f64>;
pub type CameraF32 = scene::Camera<f32>;
pub type PoseF64 = scene::Pose<f64>;
pub type PoseF32 = scene::Pose<f32>;
pub type RenderedViewF64 = render::RenderedView<f64>;
pub type RenderedViewF32 = render::RenderedView<f32>;
pub type FlowFieldF64 = flowgen::FlowField<f64>;
pub type FlowFieldF32 = flowgen::FlowField<f32>;
pub type FloaterF64 = foreground::Floater<f64>;
pub type FloaterF32 = foreground::Floater<f32>;
