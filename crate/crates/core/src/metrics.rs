//! Image quality metrics and held-out evaluation reports.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::TrainConfig;
use crate::error::{invalid, Result};
use crate::num::Real;
use crate::render::{render_image, Camera, RadianceField};
use crate::scene::{Dataset, RgbImage, Split};
use crate::train::render_config;

/// Value reported for identical images.
pub const PSNR_CAP: f64 = 99.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn check_shapes(a: &RgbImage, b: &RgbImage) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return invalid(format!(
            "image shapes differ: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        ));
    }
    Ok(())
}

/// `10 log10(1 / MSE)` over all pixels and channels, capped at
/// [`PSNR_CAP`].
pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    check_shapes(a, b)?;
    let mut sum = 0.0;
    for (p, q) in a.pixels.iter().zip(&b.pixels) {
        for c in 0..3 {
            let d = p[c] as f64 - q[c] as f64;
            sum += d * d;
        }
    }
    Ok(psnr_from_mse(sum / (3 * a.pixels.len()) as f64))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (k, v) in w.iter_mut().enumerate() {
        let x = k as f64 - r;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Valid-mode separable filtering of a row-major image.
fn filter(img: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w - SSIM_WINDOW + 1, h - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|t| k[t] * img[y * w + x + t]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|t| k[t] * rows[(y + t) * ow + x]).sum();
        }
    }
    out
}

/// Single-scale SSIM on the channel-mean grayscale images: 11x11 Gaussian
/// window with sigma 1.5, K1 = 0.01, K2 = 0.03, dynamic range 1, averaged
/// over window positions fully inside the image.
pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    check_shapes(a, b)?;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return invalid(format!(
            "SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {}x{}",
            a.width, a.height
        ));
    }
    let gray = |img: &RgbImage| -> Vec<f64> {
        img.pixels
            .iter()
            .map(|p| (p[0] as f64 + p[1] as f64 + p[2] as f64) / 3.0)
            .collect()
    };
    let (x, y) = (gray(a), gray(b));
    let (w, h) = (a.width, a.height);
    let k = gaussian_window();
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
    let mx = filter(&x, w, h, &k);
    let my = filter(&y, w, h, &k);
    let mxx = filter(&prod(&x, &x), w, h, &k);
    let myy = filter(&prod(&y, &y), w, h, &k);
    let mxy = filter(&prod(&x, &y), w, h, &k);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let n = mx.len();
    let total: f64 = (0..n)
        .map(|i| {
            let vx = mxx[i] - mx[i] * mx[i];
            let vy = myy[i] - my[i] * my[i];
            let cov = mxy[i] - mx[i] * my[i];
            ((2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2))
                / ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / n as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
}

/// Evaluation summary, written as JSON by the `eval` command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub images: Vec<ImageMetrics>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    /// Not computed; kept so the schema has a slot for it.
    pub lpips: Option<f64>,
    pub views: usize,
    pub config_hash: String,
    pub seconds: f64,
}

impl MetricReport {
    pub fn from_images(images: Vec<ImageMetrics>, config_hash: String, seconds: f64) -> Self {
        let n = images.len().max(1) as f64;
        Self {
            mean_psnr: images.iter().map(|m| m.psnr).sum::<f64>() / n,
            mean_ssim: images.iter().map(|m| m.ssim).sum::<f64>() / n,
            views: images.len(),
            lpips: None,
            images,
            config_hash,
            seconds,
        }
    }
}

/// First 16 hex digits of the SHA-256 of the config's TOML form.
pub fn config_hash(cfg: &TrainConfig) -> String {
    let digest = Sha256::digest(cfg.to_toml_string().as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Renders a camera to an image clamped to `[0, 1]`.
pub fn render_view<T: Real>(
    field: &RadianceField<T>,
    camera: &Camera<f64>,
    dataset: &Dataset,
    cfg: &TrainConfig,
) -> Result<RgbImage> {
    let rc = render_config(field, dataset, cfg);
    let (colors, _) = render_image(field, &camera.cast(), &rc)?;
    let px: Vec<[f64; 3]> = colors.iter().map(|c| c.map(|v| v.as_f64())).collect();
    RgbImage::from_f64(camera.width, camera.height, &px)
}

/// PSNR and SSIM of every view of `split` against its rendering.
pub fn evaluate<T: Real>(
    field: &RadianceField<T>,
    dataset: &Dataset,
    split: Split,
    cfg: &TrainConfig,
) -> Result<MetricReport> {
    let start = Instant::now();
    let views: Vec<_> = dataset.split(split).collect();
    if views.is_empty() {
        return invalid(format!("dataset has no {split:?} views"));
    }
    let renders = views
        .iter()
        .map(|v| render_view(field, &v.camera, dataset, cfg))
        .collect::<Result<Vec<_>>>()?;
    let images = views
        .par_iter()
        .zip(&renders)
        .map(|(v, r)| {
            Ok(ImageMetrics {
                name: v.name.clone(),
                psnr: psnr(r, &v.image)?,
                ssim: ssim(r, &v.image)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport::from_images(
        images,
        config_hash(cfg),
        start.elapsed().as_secs_f64(),
    ))
}
