//! Cameras, ray sampling, compositing, the color network and the
//! differentiable render pipeline over voxel fields.

mod camera;
mod composite;
mod field;
mod net;
mod pipeline;

pub use camera::{generate_rays, identity_pose, look_at, ndc_point, ndc_unpoint, ndc_warp, Camera, Pose, Ray};
pub use composite::{composite, sample_points, DepthMode, RenderOutput, SamplePoints};
pub use field::{query_field, ColorMode, RadianceField};
pub use net::{ColorNet, ColorNetConfig, NetScratch};
pub use pipeline::{
    camera_rays, patch_pixels, render_backward, render_depth_patch, render_image, render_rays, Exec,
    FieldGrads, RayUpstream, RenderConfig, RAY_CHUNK,
};
