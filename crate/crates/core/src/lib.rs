//! Dense voxel radiance fields reconstructed from sparse posed images.
//!
//! Core math is generic over [`Real`] (`f32` or `f64`); the aliases below fix
//! the scalar for the common cases.

pub mod ablation;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod metrics;
pub mod num;
pub mod optim;
pub mod pose;
pub mod regularize;
pub mod render;
pub mod scene;
pub mod train;
pub mod voxel;

pub use error::{Error, Result};
pub use num::Real;

pub type VoxelGridF32 = voxel::VoxelGrid<f32>;
pub type VoxelGridF64 = voxel::VoxelGrid<f64>;
pub type FieldF32 = render::RadianceField<f32>;
pub type FieldF64 = render::RadianceField<f64>;
pub type CameraF32 = render::Camera<f32>;
pub type CameraF64 = render::Camera<f64>;
