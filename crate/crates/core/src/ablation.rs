//! On/off study of the three training components: incremental voxel
//! training, depth smoothness and the voxel smoothness losses.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::metrics::evaluate;
use crate::regularize::LossWeights;
use crate::scene::{Dataset, Split};
use crate::train::train_pipeline;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    pub inc: bool,
    pub ds: bool,
    pub cavs: bool,
}

impl Variant {
    pub const BASELINE: Self = Self { inc: false, ds: false, cavs: false };
    pub const FULL: Self = Self { inc: true, ds: true, cavs: true };

    /// Baseline, each component alone, each component left out, full model.
    pub fn table() -> [Self; 8] {
        let v = |inc, ds, cavs| Self { inc, ds, cavs };
        [
            v(false, false, false),
            v(true, false, false),
            v(false, true, false),
            v(false, false, true),
            v(false, true, true),
            v(true, false, true),
            v(true, true, false),
            v(true, true, true),
        ]
    }

    pub fn label(&self) -> String {
        match (self.inc, self.ds, self.cavs) {
            (false, false, false) => "baseline".into(),
            (true, true, true) => "full".into(),
            _ => {
                let on: Vec<&str> = [("inc", self.inc), ("ds", self.ds), ("cavs", self.cavs)]
                    .iter()
                    .filter(|(_, b)| *b)
                    .map(|(n, _)| *n)
                    .collect();
                on.join("+")
            }
        }
    }

    /// `base` with the disabled components switched off in every stage.
    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        for s in &mut cfg.stages {
            if !self.inc {
                s.incremental = None;
            }
            if !self.ds {
                s.weights.ds = 0.0;
            }
            if !self.cavs {
                s.weights = LossWeights {
                    ds: s.weights.ds,
                    ..LossWeights::ZERO
                };
            }
        }
        cfg
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub inc: bool,
    pub ds: bool,
    pub cavs: bool,
    /// Mean held-out PSNR over seeds.
    pub psnr: f64,
    pub ssim: f64,
}

/// Held-out PSNR and SSIM of one variant for one seed. The seed picks both
/// the `views` training subset and the optimization randomness.
pub fn run_variant(dataset: &Dataset, base: &TrainConfig, variant: Variant, views: Option<usize>, seed: u64) -> Result<(f64, f64)> {
    let data = match views {
        Some(k) => dataset.subsample_views(k, seed)?,
        None => dataset.clone(),
    };
    let mut cfg = variant.apply(base);
    cfg.seed = seed;
    let trained = train_pipeline::<f32>(&data, &cfg, None)?;
    let report = evaluate(&trained.field, &data, Split::Test, &cfg)?;
    Ok((report.mean_psnr, report.mean_ssim))
}

/// Runs `variants` for every seed and averages per variant.
pub fn run_ablation(
    dataset: &Dataset,
    base: &TrainConfig,
    variants: &[Variant],
    views: Option<usize>,
    seeds: &[u64],
) -> Result<Vec<AblationRow>> {
    if seeds.is_empty() {
        return Err(Error::InvalidParameter("ablation needs at least one seed".into()));
    }
    variants
        .iter()
        .map(|&v| {
            let mut psnr = 0.0;
            let mut ssim = 0.0;
            for &s in seeds {
                let (p, q) = run_variant(dataset, base, v, views, s)?;
                psnr += p;
                ssim += q;
            }
            let n = seeds.len() as f64;
            Ok(AblationRow {
                inc: v.inc,
                ds: v.ds,
                cavs: v.cavs,
                psnr: psnr / n,
                ssim: ssim / n,
            })
        })
        .collect()
}

/// CSV with header `inc,ds,cavs,psnr,ssim`.
pub fn write_ablation_csv(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let err = |e: csv::Error| Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for r in rows {
        w.serialize(r).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
