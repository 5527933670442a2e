//! Training configuration, TOML (de)serialization and the named presets.
//!
//! A config file may name a `preset`; its own keys are then merged over the
//! preset. Tables merge key by key and the `stages` array merges element by
//! element, so `[[stages]] iterations = 100` only shortens the first stage.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::AdamConfig;
use crate::regularize::{LossWeights, Penalty};
use crate::render::{ColorMode, ColorNetConfig, DepthMode, Exec};

/// Initial trainable box as fractions of the grid, grown to the full grid
/// over `steps` iterations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncrementalConfig {
    pub p_min: [f64; 3],
    pub p_max: [f64; 3],
    pub steps: usize,
}

impl IncrementalConfig {
    pub fn inward() -> Self {
        Self {
            p_min: [0.2; 3],
            p_max: [0.8; 3],
            steps: 256,
        }
    }

    /// Thin far-plane slab in NDC grid coordinates (`z` is depth).
    pub fn forward() -> Self {
        Self {
            p_min: [0.0, 0.0, 0.995],
            p_max: [1.0; 3],
            steps: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PoseSamplerSpec {
    /// Hemisphere for inward scenes with a known radius, plane for forward
    /// scenes, interpolation otherwise.
    Auto,
    /// Radius defaults to the dataset's.
    Hemisphere { radius: Option<f64> },
    Plane { focus_depth: f64 },
    Interpolate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub name: String,
    pub iterations: usize,
    pub color_mode: ColorMode,
    pub resolution: [usize; 3],
    /// Input-view rays per iteration.
    pub batch_rays: usize,
    /// Rays rendered from the sampled pose, as square depth patches.
    pub sampled_rays: usize,
    pub patch_size: usize,
    pub lr_grid: f64,
    pub lr_net: f64,
    /// Learning rates decay to `lr_decay` times their start over the stage.
    pub lr_decay: f64,
    pub weights: LossWeights,
    pub incremental: Option<IncrementalConfig>,
    /// Required in feature mode.
    pub net: Option<ColorNetConfig>,
}

impl StageConfig {
    pub fn num_patches(&self) -> usize {
        self.sampled_rays / (self.patch_size * self.patch_size)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("stage {}: {m}", self.name)));
        if self.batch_rays == 0 {
            return bad("batch_rays must be positive".into());
        }
        if self.resolution.iter().any(|&n| n < 2) {
            return bad(format!("resolution {:?} needs at least 2 voxels per axis", self.resolution));
        }
        if self.weights.ds > 0.0 {
            if self.patch_size < 2 {
                return bad("patch_size must be at least 2".into());
            }
            if self.sampled_rays == 0 || self.sampled_rays % (self.patch_size * self.patch_size) != 0 {
                return bad(format!(
                    "sampled_rays {} must be a positive multiple of patch_size^2",
                    self.sampled_rays
                ));
            }
        }
        for (k, v) in [("lr_grid", self.lr_grid), ("lr_net", self.lr_net)] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{k} must be finite and nonnegative"));
            }
        }
        if !(self.lr_decay > 0.0) {
            return bad("lr_decay must be positive".into());
        }
        self.weights.validate().or_else(|e| bad(e.to_string()))?;
        if let Some(inc) = &self.incremental {
            if let Err(e) = crate::voxel::ExpandingBoxSchedule::new(inc.p_min, inc.p_max, inc.steps, self.resolution) {
                return bad(e.to_string());
            }
        }
        match (self.color_mode, &self.net) {
            (ColorMode::Feature, None) => bad("feature mode needs a [net] table".into()),
            (ColorMode::Feature, Some(n)) => n.validate().or_else(|e| bad(e.to_string())),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stages: Vec<StageConfig>,
    /// Grid entries that receive the voxel smoothness gradient.
    #[serde(default)]
    pub smooth_support: SmoothSupport,
    /// Opacity of one voxel-length step at zero raw density.
    pub alpha_init: f64,
    /// Sample spacing in voxels.
    pub step_ratio: f64,
    pub tv_penalty: Penalty,
    pub catv_huber_delta: f64,
    pub depth_mode: DepthMode,
    pub pose_sampler: PoseSamplerSpec,
    pub adam: AdamConfig,
    pub exec: Exec,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SmoothSupport {
    /// Every entry: the exact gradient of the weighted objective.
    #[default]
    Dense,
    /// Only entries that also get a rendering gradient in the same
    /// iteration. Adam rescales every nonzero gradient to a step of order
    /// `lr`, so the dense form moves unobserved voxels as fast as observed
    /// ones.
    Active,
}

pub const PRESETS: [&str; 3] = ["blender-4view", "llff-3view", "toy"];

fn feature_stage(name: &str, iterations: usize, resolution: usize, batch: usize, weights: LossWeights) -> StageConfig {
    StageConfig {
        name: name.into(),
        iterations,
        color_mode: ColorMode::Feature,
        resolution: [resolution; 3],
        batch_rays: batch,
        sampled_rays: 1 << 14,
        patch_size: 8,
        lr_grid: 0.1,
        lr_net: 1e-3,
        lr_decay: 0.1,
        weights,
        incremental: None,
        net: Some(ColorNetConfig::default()),
    }
}

impl TrainConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let base = |stages| Self {
            stages,
            smooth_support: SmoothSupport::Dense,
            alpha_init: 1e-6,
            step_ratio: 0.5,
            tv_penalty: Penalty::Huber { delta: 1.0 },
            catv_huber_delta: 1.0,
            depth_mode: DepthMode::Expected,
            pose_sampler: PoseSamplerSpec::Auto,
            adam: AdamConfig::default(),
            exec: Exec::Parallel,
            seed: 0,
        };
        match name {
            "blender-4view" => {
                let mut coarse = feature_stage("coarse", 5000, 100, 1 << 13, LossWeights::inward_coarse());
                coarse.color_mode = ColorMode::Explicit;
                coarse.net = None;
                coarse.incremental = Some(IncrementalConfig::inward());
                let mut fine = feature_stage("fine", 5000, 160, 1 << 13, LossWeights::inward_fine());
                fine.incremental = Some(IncrementalConfig::inward());
                Ok(base(vec![coarse, fine]))
            }
            "llff-3view" => {
                let mut fine = feature_stage("fine", 9000, 256, 1 << 12, LossWeights::forward_facing());
                fine.incremental = Some(IncrementalConfig::forward());
                Ok(base(vec![fine]))
            }
            "toy" => {
                let stage = StageConfig {
                    name: "toy".into(),
                    iterations: 3000,
                    color_mode: ColorMode::Explicit,
                    resolution: [64; 3],
                    batch_rays: 1024,
                    sampled_rays: 1024,
                    patch_size: 8,
                    lr_grid: 0.1,
                    lr_net: 1e-3,
                    lr_decay: 0.1,
                    weights: LossWeights::inward_coarse(),
                    incremental: Some(IncrementalConfig::inward()),
                    net: None,
                };
                let mut c = base(vec![stage]);
                c.exec = Exec::Serial;
                Ok(c)
            }
            other => Err(Error::Config(format!(
                "unknown preset {other:?}; known presets: {}",
                PRESETS.join(", ")
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Config("at least one stage is required".into()));
        }
        for s in &self.stages {
            s.validate()?;
        }
        if !(self.alpha_init > 0.0 && self.alpha_init < 1.0) {
            return Err(Error::Config(format!("alpha_init must lie in (0, 1), got {}", self.alpha_init)));
        }
        if !(self.step_ratio > 0.0) {
            return Err(Error::Config("step_ratio must be positive".into()));
        }
        if !(self.catv_huber_delta > 0.0) {
            return Err(Error::Config("catv_huber_delta must be positive".into()));
        }
        if let Penalty::Huber { delta } = self.tv_penalty {
            if !(delta > 0.0) {
                return Err(Error::Config("huber delta must be positive".into()));
            }
        }
        Ok(())
    }

    /// Parses TOML, merging over `preset` when the document names one.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut doc: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let merged = match doc.remove("preset") {
            Some(toml::Value::String(name)) => {
                let mut base = toml::Table::try_from(Self::preset(&name)?)
                    .map_err(|e| Error::Config(e.to_string()))?;
                merge(&mut base, doc);
                base
            }
            Some(other) => return Err(Error::Config(format!("preset must be a string, got {other}"))),
            None => doc,
        };
        let cfg: Self = merged
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// A preset name or a path to a TOML file.
    pub fn load(name_or_path: &str) -> Result<Self> {
        if PRESETS.contains(&name_or_path) {
            return Self::preset(name_or_path);
        }
        let path = Path::new(name_or_path);
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (Some(toml::Value::Array(b)), toml::Value::Array(o)) if k == "stages" => {
                for (i, item) in o.into_iter().enumerate() {
                    match (b.get_mut(i), item) {
                        (Some(toml::Value::Table(bt)), toml::Value::Table(ot)) => merge(bt, ot),
                        (Some(slot), item) => *slot = item,
                        (None, item) => b.push(item),
                    }
                }
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid_and_round_trip() {
        for name in PRESETS {
            let c = TrainConfig::preset(name).unwrap();
            c.validate().unwrap();
            let back = TrainConfig::from_toml_str(&c.to_toml_string()).unwrap();
            assert_eq!(back, c, "{name}");
        }
        assert!(matches!(TrainConfig::preset("nope"), Err(Error::Config(_))));
    }

    #[test]
    fn preset_defaults() {
        let b = TrainConfig::preset("blender-4view").unwrap();
        assert_eq!(b.stages.len(), 2);
        assert_eq!(b.stages[0].iterations, 5000);
        assert_eq!(b.stages[1].batch_rays, 8192);
        assert_eq!(b.stages[1].sampled_rays, 16384);
        assert_eq!(b.stages[0].lr_grid, 0.1);
        assert_eq!(b.stages[1].lr_net, 1e-3);
        assert_eq!(b.stages[0].incremental.as_ref().unwrap().steps, 256);
        let l = TrainConfig::preset("llff-3view").unwrap();
        assert_eq!(l.stages.len(), 1);
        assert_eq!((l.stages[0].iterations, l.stages[0].batch_rays), (9000, 4096));
        assert_eq!(l.stages[0].incremental.as_ref().unwrap().p_min, [0.0, 0.0, 0.995]);
    }

    #[test]
    fn overrides_merge_over_preset() {
        let c = TrainConfig::from_toml_str(
            r#"
            preset = "blender-4view"
            seed = 7
            [[stages]]
            iterations = 10
            [stages.weights]
            ds = 0.5
            "#,
        )
        .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.stages.len(), 2);
        assert_eq!(c.stages[0].iterations, 10);
        assert_eq!(c.stages[0].weights.ds, 0.5);
        assert_eq!(c.stages[0].weights.tv_density, 5e-4);
        assert_eq!(c.stages[1].iterations, 5000);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = [
            "preset = \"toy\"\nalpha_init = 1.5",
            "preset = \"toy\"\n[[stages]]\nbatch_rays = 0",
            "preset = \"toy\"\n[[stages]]\nsampled_rays = 100",
            "preset = \"toy\"\n[[stages]]\ncolor_mode = \"feature\"",
            "preset = \"toy\"\ntv_penalty = { kind = \"cauchy\" }",
            "preset = 3",
            "stages = []",
        ];
        for text in bad {
            assert!(matches!(TrainConfig::from_toml_str(text), Err(Error::Config(_))), "{text}");
        }
    }
}
