//! Posed image datasets: in-memory representation, loaders for the common
//! on-disk camera manifests, image files and the procedural toy scene.

mod blender;
mod image_io;
mod llff;
mod toy;

pub use blender::{load_transforms_json, write_transforms_json, DEFAULT_BOUNDS, DEFAULT_FAR, DEFAULT_NEAR};
pub use image_io::{read_image, read_pfm, write_pfm, write_png};
pub use llff::{load_llff_poses, LLFF_HOLDOUT};
pub use toy::{
    generate_toy_scene, render_oracle, toy_to_field, CameraRing, Primitive, ToyScene, ToySceneSpec,
};

use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::render::Camera;
use crate::voxel::Aabb;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SceneType {
    /// Cameras around an object, looking inwards.
    Inward,
    /// Cameras facing one direction; rendered in NDC.
    Forward,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Test,
}

/// Linear RGB image, values in `[0, 1]`, row-major from the top-left.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[f32; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<[f32; 3]>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return invalid(format!(
                "{} pixels do not form a {width}x{height} image",
                pixels.len()
            ));
        }
        if pixels.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return invalid("image values must lie in [0, 1]");
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, color: [f32; 3]) -> Self {
        Self {
            width,
            height,
            pixels: vec![color; width * height],
        }
    }

    pub fn get(&self, i: usize, j: usize) -> [f32; 3] {
        self.pixels[j * self.width + i]
    }

    /// Clamps each channel into `[0, 1]`.
    pub fn from_f64(width: usize, height: usize, pixels: &[[f64; 3]]) -> Result<Self> {
        let px = pixels
            .iter()
            .map(|c| c.map(|v| v.clamp(0.0, 1.0) as f32))
            .collect();
        Self::new(width, height, px)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub name: String,
    pub image: RgbImage,
    pub camera: Camera<f64>,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub views: Vec<View>,
    pub scene_type: SceneType,
    /// Region reconstructed by the voxel grids (NDC box for forward scenes).
    pub bounds: Aabb<f64>,
    /// Camera distance for inward scenes, when known.
    pub radius: Option<f64>,
    pub background: [f64; 3],
}

impl Dataset {
    pub fn new(
        views: Vec<View>,
        scene_type: SceneType,
        bounds: Aabb<f64>,
        radius: Option<f64>,
        background: [f64; 3],
    ) -> Result<Self> {
        let d = Self {
            views,
            scene_type,
            bounds,
            radius,
            background,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.views.first() else {
            return invalid("dataset has no views");
        };
        let (w, h) = (first.image.width, first.image.height);
        for v in &self.views {
            if v.image.width != w || v.image.height != h {
                return invalid(format!(
                    "view {} is {}x{}, expected {w}x{h}",
                    v.name, v.image.width, v.image.height
                ));
            }
            if v.camera.width != w || v.camera.height != h {
                return invalid(format!("camera of view {} does not match its image", v.name));
            }
        }
        if let Some(r) = self.radius {
            if !(r > 0.0) {
                return invalid(format!("hemisphere radius must be positive, got {r}"));
            }
        }
        Ok(())
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.views.len())
            .filter(|&i| self.views[i].split == split)
            .collect()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &View> {
        self.views.iter().filter(move |v| v.split == split)
    }

    pub fn image_size(&self) -> (usize, usize) {
        (self.views[0].image.width, self.views[0].image.height)
    }

    /// Keeps a seeded uniform `k`-subset of the training views, in their
    /// original order. Test views are kept as they are.
    pub fn subsample_views(&self, k: usize, seed: u64) -> Result<Self> {
        let train = self.indices(Split::Train);
        if k > train.len() {
            return invalid(format!("asked for {k} views, only {} available", train.len()));
        }
        if k == 0 {
            return invalid("need at least one training view");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut keep: Vec<usize> = sample(&mut rng, train.len(), k).into_iter().map(|i| train[i]).collect();
        keep.sort_unstable();
        let views = self
            .views
            .iter()
            .enumerate()
            .filter(|(i, v)| v.split == Split::Test || keep.binary_search(i).is_ok())
            .map(|(_, v)| v.clone())
            .collect();
        Self::new(views, self.scene_type, self.bounds, self.radius, self.background)
    }
}

/// Loads a dataset directory: `transforms_train.json` (and
/// `transforms_test.json` if present), or an LLFF-style `poses.json`.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let train = dir.join("transforms_train.json");
    if train.exists() {
        let mut ds = load_transforms_json(&train)?;
        for v in &mut ds.views {
            v.split = Split::Train;
        }
        let test = dir.join("transforms_test.json");
        if test.exists() {
            let t = load_transforms_json(&test)?;
            ds.views.extend(t.views.into_iter().map(|mut v| {
                v.split = Split::Test;
                v
            }));
        }
        ds.validate()?;
        return Ok(ds);
    }
    let poses = dir.join("poses.json");
    if poses.exists() {
        return load_llff_poses(&poses);
    }
    Err(Error::Io {
        path: dir.to_path_buf(),
        source: std::io::Error::new(
            std::io::ErrorKind::NotFound,
            "no transforms_train.json or poses.json",
        ),
    })
}

/// Writes PNG images under `dir/<split>/` and one transforms file per split.
pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    for split in [Split::Train, Split::Test] {
        let views: Vec<&View> = ds.split(split).collect();
        if views.is_empty() {
            continue;
        }
        let name = match split {
            Split::Train => "train",
            Split::Test => "test",
        };
        write_transforms_json(&dir.join(format!("transforms_{name}.json")), dir, name, &views, ds)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::look_at;

    fn tiny(n_train: usize, n_test: usize) -> Dataset {
        let views = (0..n_train + n_test)
            .map(|k| {
                let a = k as f64;
                let pose = look_at([4.0 * a.cos(), 4.0 * a.sin(), 1.0], [0.0; 3], [0.0, 0.0, 1.0]);
                View {
                    name: format!("v{k}"),
                    image: RgbImage::filled(4, 3, [0.5; 3]),
                    camera: Camera::with_focal(4, 3, 5.0, pose, 1.0, 8.0).unwrap(),
                    split: if k < n_train { Split::Train } else { Split::Test },
                }
            })
            .collect();
        Dataset::new(views, SceneType::Inward, Aabb::cube(1.5), Some(4.0), [1.0; 3]).unwrap()
    }

    #[test]
    fn subsample_all_is_identity() {
        let d = tiny(6, 2);
        assert_eq!(d.subsample_views(6, 3).unwrap(), d);
    }

    #[test]
    fn subsample_is_seeded_and_keeps_test() {
        let d = tiny(10, 3);
        let a = d.subsample_views(4, 11).unwrap();
        let b = d.subsample_views(4, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.indices(Split::Train).len(), 4);
        assert_eq!(a.indices(Split::Test).len(), 3);
        assert!(d.subsample_views(11, 0).is_err());
    }

    #[test]
    fn subsample_inclusion_frequency_is_uniform() {
        let d = tiny(100, 0);
        let names: Vec<String> = d.views.iter().map(|v| v.name.clone()).collect();
        let draws = 10_000;
        let mut counts = vec![0usize; 100];
        for s in 0..draws {
            for v in d.subsample_views(4, s).unwrap().views {
                counts[names.iter().position(|n| *n == v.name).unwrap()] += 1;
            }
        }
        let p = 0.04;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - draws as f64 * p).abs() <= 3.0 * sigma + 1.0, "{c}");
        }
    }

    #[test]
    fn mismatched_images_are_rejected() {
        let mut d = tiny(2, 0);
        d.views[1].image = RgbImage::filled(5, 3, [0.0; 3]);
        assert!(d.validate().is_err());
        assert!(RgbImage::new(2, 2, vec![[0.0; 3]; 3]).is_err());
        assert!(RgbImage::new(1, 1, vec![[1.5, 0.0, 0.0]]).is_err());
    }
}
