//! Forward-facing captures described by a `poses.json` sidecar:
//!
//! ```json
//! { "focal": 400.0,
//!   "frames": [ { "file_path": "images/000.png",
//!                 "pose": [[r00, r01, r02, tx], [r10, r11, r12, ty], [r20, r21, r22, tz]],
//!                 "near": 1.2, "far": 20.0, "split": "train" } ] }
//! ```
//!
//! Poses are camera-to-world with the camera looking down `-z`, `+y` up.
//! On load the scene is scaled so the closest near bound sits at 4/3, and
//! recentered on the average pose, so the NDC near plane is `z = -1`.
//! Frames without a `split` follow the usual hold-out of every eighth view.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::num::{cross, normalize};
use crate::render::{Camera, Pose};
use crate::voxel::Aabb;

use super::image_io::read_image;
use super::{Dataset, SceneType, Split, View};

pub const LLFF_HOLDOUT: usize = 8;

#[derive(Debug, Deserialize)]
struct Sidecar {
    focal: f64,
    #[serde(default)]
    fl_y: Option<f64>,
    #[serde(default)]
    cx: Option<f64>,
    #[serde(default)]
    cy: Option<f64>,
    #[serde(default)]
    background: Option<[f64; 3]>,
    frames: Vec<Frame>,
}

#[derive(Debug, Deserialize)]
struct Frame {
    file_path: String,
    pose: [[f64; 4]; 3],
    near: f64,
    far: f64,
    #[serde(default)]
    split: Option<Split>,
}

fn average_pose(poses: &[Pose<f64>]) -> Pose<f64> {
    let n = poses.len() as f64;
    let col = |c: usize| {
        let mut s = [0.0; 3];
        for p in poses {
            for r in 0..3 {
                s[r] += p[r][c];
            }
        }
        s.map(|v| v / n)
    };
    let z = normalize(col(2));
    let x = normalize(cross(col(1), z));
    let y = cross(z, x);
    let t = col(3);
    [[x[0], y[0], z[0], t[0]], [x[1], y[1], z[1], t[1]], [x[2], y[2], z[2], t[2]]]
}

/// `a^-1 * b` for rigid transforms.
fn relative(a: &Pose<f64>, b: &Pose<f64>) -> Pose<f64> {
    let mut out = [[0.0; 4]; 3];
    for r in 0..3 {
        for c in 0..4 {
            let mut s = 0.0;
            for k in 0..3 {
                let bk = if c < 3 { b[k][c] } else { b[k][3] - a[k][3] };
                s += a[k][r] * bk;
            }
            out[r][c] = s;
        }
    }
    out
}

pub fn load_llff_poses(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse = |m: String| Error::Parse {
        path: path.to_path_buf(),
        message: m,
    };
    let de = &mut serde_json::Deserializer::from_str(&text);
    let s: Sidecar = serde_path_to_error::deserialize(de)
        .map_err(|e| parse(format!("field `{}`: {}", e.path(), e.inner())))?;
    if s.frames.is_empty() {
        return Err(parse("field `frames`: no frames".into()));
    }
    for (k, f) in s.frames.iter().enumerate() {
        if !(f.near > 0.0 && f.far > f.near) {
            return Err(parse(format!("field `frames[{k}]`: need 0 < near < far")));
        }
    }
    let background = s.background.unwrap_or([1.0; 3]);
    let base = path.parent().unwrap_or(Path::new("."));
    let images = s
        .frames
        .par_iter()
        .map(|f| read_image(&base.join(&f.file_path), background))
        .collect::<Result<Vec<_>>>()?;

    let min_near = s.frames.iter().map(|f| f.near).fold(f64::INFINITY, f64::min);
    let scale = 1.0 / (0.75 * min_near);
    let scaled: Vec<Pose<f64>> = s
        .frames
        .iter()
        .map(|f| {
            let mut p = f.pose;
            for row in &mut p {
                row[3] *= scale;
            }
            p
        })
        .collect();
    let avg = average_pose(&scaled);
    let has_splits = s.frames.iter().any(|f| f.split.is_some());
    let mut views = Vec::with_capacity(images.len());
    for (k, ((f, image), p)) in s.frames.iter().zip(images).zip(&scaled).enumerate() {
        let (w, h) = (image.width, image.height);
        let camera = Camera::new(
            w,
            h,
            s.focal,
            s.fl_y.unwrap_or(s.focal),
            s.cx.unwrap_or(0.5 * w as f64),
            s.cy.unwrap_or(0.5 * h as f64),
            relative(&avg, p),
            1.0,
            f.far * scale,
        )
        .map_err(|e| parse(format!("field `frames[{k}]`: {e}")))?;
        let split = match f.split {
            Some(sp) => sp,
            None if !has_splits && k % LLFF_HOLDOUT == 0 && s.frames.len() > 1 => Split::Test,
            None => Split::Train,
        };
        views.push(View {
            name: f.file_path.clone(),
            image,
            camera,
            split,
        });
    }
    Dataset::new(views, SceneType::Forward, Aabb::cube(1.0), None, background)
}
