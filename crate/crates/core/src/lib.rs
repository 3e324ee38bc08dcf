//! Class-agnostic motion segmentation and velocity estimation on
//! bird's-eye-view grids from sequences of LiDAR point clouds.

pub mod config;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod model;
pub mod motion;
pub mod nn;
pub mod pipeline;
pub mod postprocess;
pub mod voxel;
pub mod warp;

pub use error::{Error, Result};
pub use geometry::{GridSpec, Point3, Transform2, Transform3};
