//! Dense voxel grids, trilinear interpolation and its adjoint, the shifted
//! softplus density activation and the expanding-box training schedule.

mod activation;
pub(crate) mod grid;
mod schedule;

pub use activation::{compute_shift, DensityActivation};
pub use grid::{trilinear_adjoint, trilinear_sample, Aabb, GridShape, Stencil, VoxelGrid};
pub use schedule::ExpandingBoxSchedule;
