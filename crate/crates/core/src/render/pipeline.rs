//! Ray batches through a [`RadianceField`]: forward rendering, the exact
//! reverse-mode gradient, and depth patches.
//!
//! Work is split into fixed chunks of [`RAY_CHUNK`] rays. Each chunk produces
//! its own gradient records, and records are applied in chunk order, so the
//! serial and parallel paths return bitwise-identical results.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::num::{norm, normalize, Real, Vec3};
use crate::voxel::{grid::scatter, Stencil};

use super::camera::{ndc_warp, Camera, Ray};
use super::composite::{clamp_to, composite_backward, composite_core, sample_span, DepthMode, RenderOutput};
use super::field::{mean_voxel_size, FieldQuery, RadianceField};

pub const RAY_CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Exec {
    /// Reference path.
    #[default]
    Serial,
    Parallel,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig<T> {
    /// World-space distance between samples.
    pub step: T,
    pub background: [T; 3],
    pub depth_mode: DepthMode,
    pub exec: Exec,
    /// Generate camera rays in forward-facing NDC.
    pub ndc: bool,
}

impl<T: Real> RenderConfig<T> {
    /// Half a voxel step, white background, expected depth.
    pub fn for_field(field: &RadianceField<T>) -> Self {
        Self {
            step: mean_voxel_size(&field.density) * T::of(0.5),
            background: [T::one(); 3],
            depth_mode: DepthMode::Expected,
            exec: Exec::Serial,
            ndc: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > T::zero()) || !self.step.is_finite() {
            return invalid(format!("render step must be positive, got {}", self.step));
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> RenderConfig<U> {
        RenderConfig {
            step: U::of(self.step.as_f64()),
            background: self.background.map(|v| U::of(v.as_f64())),
            depth_mode: self.depth_mode,
            exec: self.exec,
            ndc: self.ndc,
        }
    }
}

/// Upstream gradient of one ray's outputs.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RayUpstream<T> {
    pub color: [T; 3],
    pub depth: T,
}

/// Gradients in the layouts of the field's grids and network parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldGrads<T> {
    pub density: Vec<T>,
    pub color: Vec<T>,
    pub net: Vec<T>,
}

impl<T: Real> FieldGrads<T> {
    pub fn zeros_like(field: &RadianceField<T>) -> Self {
        Self {
            density: vec![T::zero(); field.density.values().len()],
            color: vec![T::zero(); field.color.values().len()],
            net: vec![T::zero(); field.net.as_ref().map_or(0, |n| n.params().len())],
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.density.iter_mut().zip(&other.density) {
            *a += *b;
        }
        for (a, b) in self.color.iter_mut().zip(&other.color) {
            *a += *b;
        }
        for (a, b) in self.net.iter_mut().zip(&other.net) {
            *a += *b;
        }
    }

    pub fn is_zero(&self) -> bool {
        self.density
            .iter()
            .chain(&self.color)
            .chain(&self.net)
            .all(|v| *v == T::zero())
    }

    pub fn all_finite(&self) -> bool {
        self.density
            .iter()
            .chain(&self.color)
            .chain(&self.net)
            .all(|v| v.is_finite())
    }
}

/// Per-ray sample buffers, reused across the rays of a chunk.
struct RayWork<T> {
    t: Vec<T>,
    delta: Vec<T>,
    positions: Vec<Vec3<T>>,
    raw: Vec<T>,
    sigma: Vec<T>,
    color: Vec<[T; 3]>,
    stencils: Vec<Stencil<T>>,
    features: Vec<T>,
    weights: Vec<T>,
    trans: Vec<T>,
    d_sigma: Vec<T>,
    d_color: Vec<[T; 3]>,
}

impl<T: Real> RayWork<T> {
    fn new() -> Self {
        Self {
            t: Vec::new(),
            delta: Vec::new(),
            positions: Vec::new(),
            raw: Vec::new(),
            sigma: Vec::new(),
            color: Vec::new(),
            stencils: Vec::new(),
            features: Vec::new(),
            weights: Vec::new(),
            trans: Vec::new(),
            d_sigma: Vec::new(),
            d_color: Vec::new(),
        }
    }

    fn clear(&mut self) {
        self.t.clear();
        self.delta.clear();
        self.positions.clear();
        self.raw.clear();
        self.sigma.clear();
        self.color.clear();
        self.stencils.clear();
        self.features.clear();
    }
}

/// Samples the ray, evaluates the field and composites. Leaves everything
/// the backward pass needs in `work`.
fn trace<T: Real>(
    field: &RadianceField<T>,
    ray: &Ray<T>,
    cfg: &RenderConfig<T>,
    query: &mut FieldQuery<T>,
    work: &mut RayWork<T>,
) -> ([T; 3], T, T) {
    work.clear();
    let bounds = field.bounds();
    // NDC rays are not unit length; keep the spatial spacing at `step`
    let t_step = cfg.step / norm(ray.dir);
    if let Some((start, n)) = sample_span(ray, bounds, t_step) {
        let half = T::of(0.5);
        let delta = cfg.step / field.distance_unit;
        let view = normalize(ray.dir);
        for k in 0..n {
            let t = start + (T::of(k as f64) + half) * t_step;
            let p = clamp_to(ray.at(t), bounds);
            let s = query.eval(field, p, view);
            work.t.push(t);
            work.delta.push(delta);
            work.positions.push(p);
            work.raw.push(s.raw_density);
            work.sigma.push(s.sigma);
            work.color.push(s.color);
            work.stencils.push(query.stencil);
            work.features.extend_from_slice(&query.feature);
        }
    }
    composite_core(
        &work.sigma,
        &work.color,
        &work.delta,
        &work.t,
        cfg.background,
        cfg.depth_mode,
        &mut work.weights,
        &mut work.trans,
    )
}

fn for_chunks<T, R, F>(n: usize, exec: Exec, f: F) -> Vec<R>
where
    T: Real,
    R: Send,
    F: Fn(std::ops::Range<usize>) -> R + Sync + Send,
{
    let chunks: Vec<std::ops::Range<usize>> = (0..n)
        .step_by(RAY_CHUNK)
        .map(|s| s..(s + RAY_CHUNK).min(n))
        .collect();
    match exec {
        Exec::Serial => chunks.into_iter().map(f).collect(),
        Exec::Parallel => chunks.into_par_iter().map(f).collect(),
    }
}

/// Renders every ray: sample, query, composite.
pub fn render_rays<T: Real>(
    field: &RadianceField<T>,
    rays: &[Ray<T>],
    cfg: &RenderConfig<T>,
) -> Result<Vec<RenderOutput<T>>> {
    field.validate()?;
    cfg.validate()?;
    let chunks = for_chunks::<T, _, _>(rays.len(), cfg.exec, |range| {
        let mut query = FieldQuery::new(field);
        let mut work = RayWork::new();
        range
            .map(|r| {
                let (color, depth, final_t) = trace(field, &rays[r], cfg, &mut query, &mut work);
                RenderOutput {
                    color,
                    depth,
                    weights: work.weights.clone(),
                    final_transmittance: final_t,
                }
            })
            .collect::<Vec<_>>()
    });
    Ok(chunks.into_iter().flatten().collect())
}

/// Gradient records of one chunk, applied later in chunk order.
struct ChunkGrads<T> {
    stencils: Vec<Stencil<T>>,
    d_density: Vec<T>,
    d_color: Vec<T>,
    net: Vec<T>,
}

/// Exact gradients of `sum_r upstream_r . (color_r, depth_r)` with respect
/// to the density grid, the color or feature grid and the network.
pub fn render_backward<T: Real>(
    field: &RadianceField<T>,
    rays: &[Ray<T>],
    cfg: &RenderConfig<T>,
    upstream: &[RayUpstream<T>],
) -> Result<FieldGrads<T>> {
    field.validate()?;
    cfg.validate()?;
    if rays.len() != upstream.len() {
        return invalid(format!(
            "{} rays but {} upstream gradients",
            rays.len(),
            upstream.len()
        ));
    }
    let channels = field.color.channels();
    let n_net = field.net.as_ref().map_or(0, |n| n.params().len());
    let chunks = for_chunks::<T, _, _>(rays.len(), cfg.exec, |range| {
        let mut query = FieldQuery::new(field);
        let mut work = RayWork::new();
        let mut out = ChunkGrads {
            stencils: Vec::new(),
            d_density: Vec::new(),
            d_color: Vec::new(),
            net: vec![T::zero(); n_net],
        };
        let mut d_feat = vec![T::zero(); channels];
        for r in range {
            let up = upstream[r];
            if up.color.iter().all(|v| *v == T::zero()) && up.depth == T::zero() {
                continue;
            }
            let (_, _, final_t) = trace(field, &rays[r], cfg, &mut query, &mut work);
            composite_backward(
                &work.color,
                &work.delta,
                &work.t,
                cfg.background,
                cfg.depth_mode,
                &work.weights,
                &work.trans,
                final_t,
                up.color,
                up.depth,
                &mut work.d_sigma,
                &mut work.d_color,
            );
            let view = normalize(rays[r].dir);
            for i in 0..work.sigma.len() {
                let d_raw = work.d_sigma[i] * field.activation.derivative(work.raw[i]);
                let c = work.color[i];
                let dl = [0, 1, 2].map(|ch| work.d_color[i][ch] * c[ch] * (T::one() - c[ch]));
                d_feat.iter_mut().for_each(|v| *v = T::zero());
                match (&field.net, &mut query.net) {
                    (Some(net), Some(scratch)) => {
                        if dl.iter().any(|v| *v != T::zero()) {
                            let f = &work.features[i * channels..(i + 1) * channels];
                            net.forward(f, work.positions[i], view, scratch);
                            net.backward(scratch, dl, &mut out.net, &mut d_feat);
                        }
                    }
                    _ => d_feat.copy_from_slice(&dl),
                }
                if d_raw == T::zero() && d_feat.iter().all(|v| *v == T::zero()) {
                    continue;
                }
                out.stencils.push(work.stencils[i]);
                out.d_density.push(d_raw);
                out.d_color.extend_from_slice(&d_feat);
            }
        }
        out
    });

    let mut grads = FieldGrads::zeros_like(field);
    let nv = field.density.num_voxels();
    for chunk in &chunks {
        for (k, st) in chunk.stencils.iter().enumerate() {
            scatter(st, &chunk.d_density[k..k + 1], nv, &mut grads.density);
            scatter(st, &chunk.d_color[k * channels..(k + 1) * channels], nv, &mut grads.color);
        }
        for (a, b) in grads.net.iter_mut().zip(&chunk.net) {
            *a += *b;
        }
    }
    Ok(grads)
}

/// Camera rays for the given pixels, warped to NDC when configured.
pub fn camera_rays<T: Real>(
    camera: &Camera<T>,
    pixels: &[(usize, usize)],
    cfg: &RenderConfig<T>,
) -> Result<Vec<Ray<T>>> {
    pixels
        .iter()
        .map(|&(i, j)| {
            let r = camera.ray(i, j)?;
            if cfg.ndc {
                ndc_warp(&r, camera)
            } else {
                Ok(r)
            }
        })
        .collect()
}

/// Pixel indices of a `size x size` patch whose top-left pixel is
/// `center - size / 2`, row-major.
pub fn patch_pixels(
    width: usize,
    height: usize,
    center: (usize, usize),
    size: usize,
) -> Result<Vec<(usize, usize)>> {
    if size == 0 {
        return invalid("patch size must be positive");
    }
    let half = size / 2;
    let (cx, cy) = center;
    if cx < half || cy < half || cx - half + size > width || cy - half + size > height {
        return invalid(format!(
            "{size}x{size} patch at ({cx}, {cy}) leaves the {width}x{height} image"
        ));
    }
    let mut px = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            px.push((cx - half + x, cy - half + y));
        }
    }
    Ok(px)
}

/// Depth of every pixel of a patch, row-major.
pub fn render_depth_patch<T: Real>(
    field: &RadianceField<T>,
    camera: &Camera<T>,
    center: (usize, usize),
    size: usize,
    cfg: &RenderConfig<T>,
) -> Result<Vec<T>> {
    let px = patch_pixels(camera.width, camera.height, center, size)?;
    let rays = camera_rays(camera, &px, cfg)?;
    Ok(render_rays(field, &rays, cfg)?.into_iter().map(|o| o.depth).collect())
}

/// Full image render, row-major colors and depths.
pub fn render_image<T: Real>(
    field: &RadianceField<T>,
    camera: &Camera<T>,
    cfg: &RenderConfig<T>,
) -> Result<(Vec<[T; 3]>, Vec<T>)> {
    let px: Vec<(usize, usize)> = (0..camera.height)
        .flat_map(|j| (0..camera.width).map(move |i| (i, j)))
        .collect();
    let rays = camera_rays(camera, &px, cfg)?;
    let out = render_rays(field, &rays, cfg)?;
    Ok(out.into_iter().map(|o| (o.color, o.depth)).unzip())
}
