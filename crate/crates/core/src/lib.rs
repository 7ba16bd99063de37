//! Planar scene reconstruction by differentiable rectangle splatting.
//!
//! A scene is a set of learnable rectangles ([`geometry::PlanePrimitive`]).
//! They are rendered into per-view depth and normal maps, compared against
//! target maps, and optimized with Adam; nearby coplanar rectangles are then
//! merged into plane instances.

pub mod config;
pub mod dataio;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod optimizer;
pub mod renderer;
pub mod scene_init;
pub mod splatting;
pub mod synthetic;

pub use error::{Error, Result};
