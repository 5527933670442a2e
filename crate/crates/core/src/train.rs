//! The optimization loop: per-stage training with photometric, voxel
//! smoothness and depth-smoothness terms, the incremental freeze mask, and
//! the multi-stage pipeline.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{save_checkpoint, CheckpointMeta};
use crate::config::{PoseSamplerSpec, SmoothSupport, StageConfig, TrainConfig};
use crate::error::{invalid, Error, Result};
use crate::num::Real;
use crate::optim::{adam_step, lr_at, AdamState};
use crate::pose::{PlaneSpec, PoseMode, PoseSampler};
use crate::regularize::{cavs_loss, ds_loss, photometric_loss, total_loss, LossWeights, Penalty};
use crate::render::{
    camera_rays, render_backward, render_rays, Camera, ColorMode, ColorNet, FieldGrads,
    RadianceField, Ray, RayUpstream, RenderConfig,
};
use crate::scene::{Dataset, SceneType, Split};
use crate::voxel::{DensityActivation, ExpandingBoxSchedule, VoxelGrid};

/// Loss components of one iteration, each already multiplied by its weight.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub photometric: f64,
    pub tv_feature: f64,
    pub tv_density: f64,
    pub catv: f64,
    pub ds: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageReport {
    pub name: String,
    pub log: Vec<LogRow>,
    pub seconds: f64,
}

impl StageReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_log_csv(path, &self.log)
    }
}

pub fn write_log_csv(path: &Path, log: &[LogRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for row in log {
        w.serialize(row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    }
}

/// Per-stream RNG derived from the config seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Render settings used during training and evaluation of `dataset`.
pub fn render_config<T: Real>(field: &RadianceField<T>, dataset: &Dataset, cfg: &TrainConfig) -> RenderConfig<T> {
    render_settings(field, dataset.background, dataset.scene_type, cfg)
}

pub fn render_settings<T: Real>(
    field: &RadianceField<T>,
    background: [f64; 3],
    scene_type: SceneType,
    cfg: &TrainConfig,
) -> RenderConfig<T> {
    let mut rc = RenderConfig::for_field(field);
    rc.step = rc.step * T::of(2.0 * cfg.step_ratio);
    rc.background = background.map(T::of);
    rc.depth_mode = cfg.depth_mode;
    rc.exec = cfg.exec;
    rc.ndc = scene_type == SceneType::Forward;
    rc
}

/// Zero grids, Glorot network, distance unit equal to the mean voxel edge.
pub fn init_field<T: Real>(
    stage: &StageConfig,
    dataset: &Dataset,
    alpha_init: f64,
    rng: &mut ChaCha8Rng,
) -> Result<RadianceField<T>> {
    let bounds = dataset.bounds.cast();
    let density = VoxelGrid::zeros(1, stage.resolution, bounds)?;
    let (color, net) = match stage.color_mode {
        ColorMode::Explicit => (VoxelGrid::zeros(3, stage.resolution, bounds)?, None),
        ColorMode::Feature => {
            let nc = stage
                .net
                .ok_or_else(|| Error::Config(format!("stage {} needs a network", stage.name)))?;
            (
                VoxelGrid::zeros(nc.feature_dim, stage.resolution, bounds)?,
                Some(ColorNet::init(nc, rng)?),
            )
        }
    };
    let s = density.shape().voxel_size();
    let unit = (s[0] + s[1] + s[2]) / T::of(3.0);
    RadianceField::new(density, color, net, DensityActivation::new(T::of(alpha_init), T::one())?, unit)
}

/// Next-stage field: density upsampled from `prev`; color grid and network
/// carried over when the color mode matches, fresh otherwise.
pub fn carry_over<T: Real>(
    prev: &RadianceField<T>,
    stage: &StageConfig,
    dataset: &Dataset,
    alpha_init: f64,
    rng: &mut ChaCha8Rng,
) -> Result<RadianceField<T>> {
    let mut next = init_field::<T>(stage, dataset, alpha_init, rng)?;
    next.density = prev.density.upsample(stage.resolution)?;
    if prev.mode() == stage.color_mode && prev.color.channels() == next.color.channels() {
        next.color = prev.color.upsample(stage.resolution)?;
        if let (Some(p), Some(n)) = (&prev.net, &next.net) {
            if p.config() == n.config() {
                next.net = prev.net.clone();
            }
        }
    }
    next.validate()?;
    Ok(next)
}

pub fn build_pose_sampler(spec: &PoseSamplerSpec, dataset: &Dataset, seed: u64) -> Result<PoseSampler> {
    let train_poses: Vec<_> = dataset.split(Split::Train).map(|v| v.camera.pose).collect();
    let target = {
        let (lo, hi) = (dataset.bounds.min, dataset.bounds.max);
        [0, 1, 2].map(|k| 0.5 * (lo[k] + hi[k]))
    };
    let mode = match spec {
        PoseSamplerSpec::Auto => match (dataset.scene_type, dataset.radius) {
            (SceneType::Inward, Some(radius)) => PoseMode::Hemisphere { radius, target },
            (SceneType::Forward, _) => PoseMode::Plane(PlaneSpec::from_poses(&train_poses, 4.0)?),
            _ => PoseMode::Interpolate { poses: train_poses },
        },
        PoseSamplerSpec::Hemisphere { radius } => {
            let radius = radius
                .or(dataset.radius)
                .ok_or_else(|| Error::Config("hemisphere sampling needs a radius".into()))?;
            PoseMode::Hemisphere { radius, target }
        }
        PoseSamplerSpec::Plane { focus_depth } => PoseMode::Plane(PlaneSpec::from_poses(&train_poses, *focus_depth)?),
        PoseSamplerSpec::Interpolate => PoseMode::Interpolate { poses: train_poses },
    };
    PoseSampler::new(mode, seed)
}

/// All rays and target colors of the training views.
pub fn training_rays<T: Real>(dataset: &Dataset, rc: &RenderConfig<T>) -> Result<(Vec<Ray<T>>, Vec<[T; 3]>)> {
    let mut rays = Vec::new();
    let mut colors = Vec::new();
    for v in dataset.split(Split::Train) {
        let cam: Camera<T> = v.camera.cast();
        let px: Vec<(usize, usize)> = (0..cam.height)
            .flat_map(|j| (0..cam.width).map(move |i| (i, j)))
            .collect();
        rays.extend(camera_rays(&cam, &px, rc)?);
        colors.extend(v.image.pixels.iter().map(|c| c.map(|x| T::of(x as f64))));
    }
    if rays.is_empty() {
        return invalid("dataset has no training views");
    }
    Ok((rays, colors))
}

/// Hook called after every iteration with the updated field.
pub type Observer<'a, T> = &'a mut dyn FnMut(usize, &RadianceField<T>, &LogRow);

fn snapshot<T: Real>(field: &RadianceField<T>, row: &LogRow) -> String {
    let max_abs = |g: &VoxelGrid<T>| g.values().iter().fold(0.0f64, |m, v| m.max(v.as_f64().abs()));
    format!(
        "photometric={} tv_feature={} tv_density={} catv={} ds={} max|density|={} max|color|={}",
        row.photometric,
        row.tv_feature,
        row.tv_density,
        row.catv,
        row.ds,
        max_abs(&field.density),
        max_abs(&field.color)
    )
}

/// Rays of one optimization step.
#[derive(Clone, Copy, Debug)]
pub struct StepBatch<'a, T> {
    pub rays: &'a [Ray<T>],
    pub targets: &'a [[T; 3]],
    /// Sampled-view rays, `patch_size^2` per patch in row-major order. Only
    /// their depth enters the loss.
    pub patch_rays: &'a [Ray<T>],
    pub patch_size: usize,
}

/// Weighted training loss of one batch and its exact gradient with respect
/// to every field parameter. The returned row has `step = 0`.
pub fn objective<T: Real>(
    field: &RadianceField<T>,
    batch: &StepBatch<'_, T>,
    weights: &LossWeights,
    tv_penalty: Penalty,
    catv_huber_delta: f64,
    rc: &RenderConfig<T>,
) -> Result<(LogRow, FieldGrads<T>)> {
    objective_on(field, batch, weights, tv_penalty, catv_huber_delta, rc, SmoothSupport::Dense)
}

/// [`objective`] with the smoothness gradient restricted to `support`. The
/// logged loss values are the same either way.
pub fn objective_on<T: Real>(
    field: &RadianceField<T>,
    batch: &StepBatch<'_, T>,
    weights: &LossWeights,
    tv_penalty: Penalty,
    catv_huber_delta: f64,
    rc: &RenderConfig<T>,
    support: SmoothSupport,
) -> Result<(LogRow, FieldGrads<T>)> {
    let out = render_rays(field, batch.rays, rc)?;
    let colors: Vec<[T; 3]> = out.iter().map(|o| o.color).collect();
    let (photo, g_color) = photometric_loss(&colors, batch.targets)?;
    let mut rays = batch.rays.to_vec();
    let mut upstream: Vec<RayUpstream<T>> = g_color
        .into_iter()
        .map(|c| RayUpstream { color: c, depth: T::zero() })
        .collect();

    let mut row = LogRow {
        photometric: photo.as_f64(),
        ..LogRow::default()
    };
    if weights.ds > 0.0 && !batch.patch_rays.is_empty() {
        let size = batch.patch_size;
        let depths = render_rays(field, batch.patch_rays, rc)?;
        let patches: Vec<Vec<T>> = depths
            .chunks(size * size)
            .map(|c| c.iter().map(|o| o.depth).collect())
            .collect();
        let (v, g) = ds_loss(&patches, size, T::of(weights.ds))?;
        row.ds = v.as_f64();
        rays.extend_from_slice(batch.patch_rays);
        upstream.extend(g.into_iter().flatten().map(|d| RayUpstream { color: [T::zero(); 3], depth: d }));
    }

    let mut grads = render_backward(field, &rays, rc, &upstream)?;
    if weights.has_cavs() {
        let cavs = cavs_loss(&field.density, &field.color, weights, tv_penalty, catv_huber_delta)?;
        row.tv_feature = cavs.tv_feature.as_f64();
        row.tv_density = cavs.tv_density.as_f64();
        row.catv = cavs.catv.as_f64();
        let active = support == SmoothSupport::Active;
        add_into(&mut grads.density, &cavs.grad_density, active);
        add_into(&mut grads.color, &cavs.grad_feature, active);
    }
    row.total = total_loss(row.photometric, row.tv_feature + row.tv_density + row.catv, row.ds);
    Ok((row, grads))
}

/// Runs stage `stage` of `cfg` on `field` in place and returns the per
/// iteration loss log.
pub fn train_stage<T: Real>(
    field: &mut RadianceField<T>,
    dataset: &Dataset,
    cfg: &TrainConfig,
    stage: usize,
) -> Result<StageReport> {
    train_stage_observed(field, dataset, cfg, stage, &mut |_, _, _| {})
}

pub fn train_stage_observed<T: Real>(
    field: &mut RadianceField<T>,
    dataset: &Dataset,
    cfg: &TrainConfig,
    stage: usize,
    observer: Observer<'_, T>,
) -> Result<StageReport> {
    cfg.validate()?;
    field.validate()?;
    let sc = cfg
        .stages
        .get(stage)
        .ok_or_else(|| Error::Config(format!("no stage {stage}")))?;
    if field.density.resolution() != sc.resolution || field.mode() != sc.color_mode {
        return Err(Error::Config(format!(
            "field ({:?}, {:?}) does not match stage {} ({:?}, {:?})",
            field.density.resolution(),
            field.mode(),
            sc.name,
            sc.resolution,
            sc.color_mode
        )));
    }
    let start = Instant::now();
    let rc = render_config(field, dataset, cfg);
    let (rays, targets) = training_rays(dataset, &rc)?;
    let mut rng = stream_rng(cfg.seed, 2 * stage as u64 + 1);
    let use_ds = sc.weights.ds > 0.0;
    let mut sampler = if use_ds {
        Some(build_pose_sampler(&cfg.pose_sampler, dataset, cfg.seed.wrapping_add(1000 + stage as u64))?)
    } else {
        None
    };
    let ref_cam = dataset
        .split(Split::Train)
        .next()
        .map(|v| v.camera)
        .ok_or_else(|| Error::InvalidParameter("dataset has no training views".into()))?;
    let schedule = match &sc.incremental {
        Some(inc) => Some(ExpandingBoxSchedule::new(inc.p_min, inc.p_max, inc.steps, sc.resolution)?),
        None => None,
    };

    let mut st_density = AdamState::new(field.density.values().len(), cfg.adam);
    let mut st_color = AdamState::new(field.color.values().len(), cfg.adam);
    let mut st_net = AdamState::new(field.net.as_ref().map_or(0, |n| n.params().len()), cfg.adam);
    let mut log = Vec::with_capacity(sc.iterations);

    let mut batch: Vec<Ray<T>> = Vec::with_capacity(sc.batch_rays + sc.sampled_rays);
    let mut batch_targets = Vec::with_capacity(sc.batch_rays);
    for i in 0..sc.iterations {
        batch.clear();
        batch_targets.clear();
        for _ in 0..sc.batch_rays {
            let k = rng.gen_range(0..rays.len());
            batch.push(rays[k]);
            batch_targets.push(targets[k]);
        }
        let mut patch_rays = Vec::new();
        if let Some(sampler) = sampler.as_mut() {
            let pose = sampler.sample_pose()?;
            let cam: Camera<T> = Camera { pose, ..ref_cam }.cast();
            let size = sc.patch_size;
            let mut px = Vec::with_capacity(sc.sampled_rays);
            for _ in 0..sc.num_patches() {
                let x0 = rng.gen_range(0..=cam.width - size.min(cam.width));
                let y0 = rng.gen_range(0..=cam.height - size.min(cam.height));
                for y in 0..size {
                    for x in 0..size {
                        px.push(((x0 + x).min(cam.width - 1), (y0 + y).min(cam.height - 1)));
                    }
                }
            }
            patch_rays = camera_rays(&cam, &px, &rc)?;
        }
        let step = StepBatch {
            rays: &batch,
            targets: &batch_targets,
            patch_rays: &patch_rays,
            patch_size: sc.patch_size,
        };
        let (mut row, grads) = objective_on(
            field,
            &step,
            &sc.weights,
            cfg.tv_penalty,
            cfg.catv_huber_delta,
            &rc,
            cfg.smooth_support,
        )?;
        row.step = i;
        if !row.total.is_finite() || !grads.all_finite() {
            return Err(Error::NonFinite {
                step: i,
                snapshot: snapshot(field, &row),
            });
        }

        apply_update(field, &grads, schedule.as_ref(), i, sc, &mut st_density, &mut st_color, &mut st_net)?;
        observer(i, field, &row);
        log.push(row);
    }
    Ok(StageReport {
        name: sc.name.clone(),
        log,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// `dst += src`, or only where `dst` is already nonzero when `active`.
fn add_into<T: Real>(dst: &mut [T], src: &[T], active: bool) {
    for (d, s) in dst.iter_mut().zip(src) {
        if !active || *d != T::zero() {
            *d += *s;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn apply_update<T: Real>(
    field: &mut RadianceField<T>,
    grads: &FieldGrads<T>,
    schedule: Option<&ExpandingBoxSchedule>,
    i: usize,
    sc: &StageConfig,
    st_density: &mut AdamState<T>,
    st_color: &mut AdamState<T>,
    st_net: &mut AdamState<T>,
) -> Result<()> {
    let mask = schedule.filter(|s| i < s.max_steps()).map(|s| s.freeze_mask(i));
    let lr = T::of(lr_at(i, sc.iterations, sc.lr_grid, sc.lr_decay));
    adam_step(field.density.values_mut(), &grads.density, st_density, lr, mask.as_deref())?;
    adam_step(field.color.values_mut(), &grads.color, st_color, lr, mask.as_deref())?;
    if let Some(net) = field.net.as_mut() {
        let lr = T::of(lr_at(i, sc.iterations, sc.lr_net, sc.lr_decay));
        adam_step(net.params_mut(), &grads.net, st_net, lr, None)?;
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct PipelineResult<T> {
    pub field: RadianceField<T>,
    pub stages: Vec<StageReport>,
}

/// Trains every stage in order. Later stages start from the previous
/// field (see [`carry_over`]). When `out_dir` is given, a checkpoint and
/// the loss log are written after each stage.
pub fn train_pipeline<T: Real>(
    dataset: &Dataset,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<PipelineResult<T>> {
    cfg.validate()?;
    let mut rng = stream_rng(cfg.seed, 0);
    let mut field: Option<RadianceField<T>> = None;
    let mut stages = Vec::new();
    let mut step = 0;
    for (k, sc) in cfg.stages.iter().enumerate() {
        let mut f = match &field {
            None => init_field(sc, dataset, cfg.alpha_init, &mut rng)?,
            Some(prev) => carry_over(prev, sc, dataset, cfg.alpha_init, &mut rng)?,
        };
        let report = train_stage(&mut f, dataset, cfg, k)?;
        step += sc.iterations;
        if let Some(dir) = out_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let meta = CheckpointMeta {
                step,
                stage: sc.name.clone(),
                config: cfg.clone(),
            };
            save_checkpoint(&f, &meta, &dir.join(format!("{k}_{}.svx", sc.name)))?;
            report.write_csv(&dir.join(format!("{k}_{}_log.csv", sc.name)))?;
        }
        stages.push(report);
        field = Some(f);
    }
    Ok(PipelineResult {
        field: field.expect("at least one stage"),
        stages,
    })
}
