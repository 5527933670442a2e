//! `transforms.json` manifests: a horizontal field of view plus one
//! camera-to-world matrix and image path per frame. Optional keys extend the
//! format with explicit intrinsics, clipping range, scene box and background.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::render::{Camera, Pose};
use crate::voxel::Aabb;

use super::image_io::{read_image, write_png};
use super::{Dataset, SceneType, Split, View};

pub const DEFAULT_NEAR: f64 = 2.0;
pub const DEFAULT_FAR: f64 = 6.0;
/// Half-extent of the default reconstruction cube.
pub const DEFAULT_BOUNDS: f64 = 1.5;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    camera_angle_x: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fl_x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fl_y: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cx: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    near: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    far: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scene_bounds: Option<[[f64; 3]; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hemisphere_radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    background: Option<[f64; 3]>,
    frames: Vec<Frame>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Frame {
    file_path: String,
    transform_matrix: [[f64; 4]; 4],
}

fn parse_error(path: &Path, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn resolve_image(base: &Path, file: &str) -> PathBuf {
    let p = base.join(file);
    if p.extension().is_none() {
        p.with_extension("png")
    } else {
        p
    }
}

/// Loads one manifest. The split is `test` when the file name contains
/// "test", `train` otherwise. Frames keep their listed order.
pub fn load_transforms_json(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let m: Manifest = serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        parse_error(path, format!("field `{field}`: {}", e.inner()))
    })?;
    if m.frames.is_empty() {
        return Err(parse_error(path, "field `frames`: no frames"));
    }
    if !(m.camera_angle_x > 0.0 && m.camera_angle_x < std::f64::consts::PI) {
        return Err(parse_error(path, "field `camera_angle_x`: must lie in (0, pi)"));
    }
    let background = m.background.unwrap_or([1.0; 3]);
    let base = path.parent().unwrap_or(Path::new("."));
    let split = match path.file_name().and_then(|n| n.to_str()) {
        Some(n) if n.contains("test") => Split::Test,
        _ => Split::Train,
    };
    let images = m
        .frames
        .par_iter()
        .map(|f| read_image(&resolve_image(base, &f.file_path), background))
        .collect::<Result<Vec<_>>>()?;
    let near = m.near.unwrap_or(DEFAULT_NEAR);
    let far = m.far.unwrap_or(DEFAULT_FAR);
    let mut views = Vec::with_capacity(images.len());
    for (k, (f, image)) in m.frames.iter().zip(images).enumerate() {
        let (w, h) = (image.width, image.height);
        let focal_x = m.fl_x.unwrap_or(0.5 * w as f64 / (0.5 * m.camera_angle_x).tan());
        let focal_y = m.fl_y.unwrap_or(focal_x);
        let t = &f.transform_matrix;
        if t[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(parse_error(
                path,
                format!("field `frames[{k}].transform_matrix`: last row must be 0 0 0 1"),
            ));
        }
        let pose: Pose<f64> = [t[0], t[1], t[2]];
        let camera = Camera::new(
            w,
            h,
            focal_x,
            focal_y,
            m.cx.unwrap_or(0.5 * w as f64),
            m.cy.unwrap_or(0.5 * h as f64),
            pose,
            near,
            far,
        )
        .map_err(|e| parse_error(path, format!("field `frames[{k}]`: {e}")))?;
        views.push(View {
            name: f.file_path.clone(),
            image,
            camera,
            split,
        });
    }
    let bounds = match m.scene_bounds {
        Some([lo, hi]) => Aabb::new(lo, hi).map_err(|e| parse_error(path, format!("field `scene_bounds`: {e}")))?,
        None => Aabb::cube(DEFAULT_BOUNDS),
    };
    Dataset::new(views, SceneType::Inward, bounds, m.hemisphere_radius, background)
}

/// Writes `views` as PNGs under `root/<subdir>/` and their manifest to
/// `path`, including every optional key.
pub fn write_transforms_json(path: &Path, root: &Path, subdir: &str, views: &[&View], ds: &Dataset) -> Result<()> {
    let Some(first) = views.first() else {
        return Err(Error::InvalidParameter("no views to write".into()));
    };
    let c = &first.camera;
    let mut frames = Vec::with_capacity(views.len());
    for (k, v) in views.iter().enumerate() {
        let stem = format!("r_{k}");
        write_png(&root.join(subdir).join(format!("{stem}.png")), &v.image)?;
        let p = &v.camera.pose;
        frames.push(Frame {
            file_path: format!("./{subdir}/{stem}"),
            transform_matrix: [p[0], p[1], p[2], [0.0, 0.0, 0.0, 1.0]],
        });
    }
    let m = Manifest {
        camera_angle_x: 2.0 * (0.5 * c.width as f64 / c.fx).atan(),
        fl_x: Some(c.fx),
        fl_y: Some(c.fy),
        cx: Some(c.cx),
        cy: Some(c.cy),
        near: Some(c.near),
        far: Some(c.far),
        scene_bounds: Some([ds.bounds.min, ds.bounds.max]),
        hemisphere_radius: ds.radius,
        background: Some(ds.background),
        frames,
    };
    let text = serde_json::to_string_pretty(&m).expect("manifest serializes");
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::look_at;
    use crate::scene::{load_dataset, write_dataset, RgbImage};

    fn write_manifest(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    fn two_frames(dir: &Path) -> PathBuf {
        for k in 0..2 {
            write_png(&dir.join(format!("train/r_{k}.png")), &RgbImage::filled(8, 6, [0.2, 0.4, 0.6])).unwrap();
        }
        write_manifest(
            dir,
            "transforms_train.json",
            r#"{"camera_angle_x": 1.5707963267948966, "frames": [
                {"file_path": "./train/r_0", "transform_matrix": [[1,0,0,0],[0,1,0,0],[0,0,1,4],[0,0,0,1]]},
                {"file_path": "./train/r_1.png", "transform_matrix": [[1,0,0,1],[0,1,0,0],[0,0,1,4],[0,0,0,1]]}
            ]}"#,
        )
    }

    #[test]
    fn loads_frames_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let ds = load_transforms_json(&two_frames(dir.path())).unwrap();
        assert_eq!(ds.views.len(), 2);
        assert_eq!(ds.views[1].camera.origin(), [1.0, 0.0, 4.0]);
        // 90 degree field of view over 8 pixels
        assert!((ds.views[0].camera.fx - 4.0).abs() < 1e-12);
        assert!(ds.views.iter().all(|v| v.split == Split::Train));
    }

    #[test]
    fn focal_from_field_of_view() {
        let dir = tempfile::tempdir().unwrap();
        write_png(&dir.path().join("a.png"), &RgbImage::filled(800, 2, [0.0; 3])).unwrap();
        let p = write_manifest(
            dir.path(),
            "t.json",
            r#"{"camera_angle_x": 1.5707963267948966, "frames": [
                {"file_path": "a.png", "transform_matrix": [[1,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,1]]}]}"#,
        );
        let ds = load_transforms_json(&p).unwrap();
        assert!((ds.views[0].camera.fx - 400.0).abs() < 1e-9);
    }

    #[test]
    fn errors_name_the_problem() {
        let dir = tempfile::tempdir().unwrap();
        let missing = load_transforms_json(&dir.path().join("nope.json")).unwrap_err();
        assert!(matches!(missing, Error::Io { .. }));

        let p = write_manifest(dir.path(), "a.json", r#"{"frames": []}"#);
        let e = load_transforms_json(&p).unwrap_err().to_string();
        assert!(e.contains("camera_angle_x"), "{e}");

        let p = write_manifest(
            dir.path(),
            "b.json",
            r#"{"camera_angle_x": 0.5, "frames": [{"file_path": "x", "transform_matrix": "no"}]}"#,
        );
        let e = load_transforms_json(&p).unwrap_err().to_string();
        assert!(e.contains("frames[0].transform_matrix"), "{e}");

        let p = write_manifest(
            dir.path(),
            "c.json",
            r#"{"camera_angle_x": 0.5, "frames": [{"file_path": "gone.png", "transform_matrix": [[1,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,1]]}]}"#,
        );
        let e = load_transforms_json(&p).unwrap_err();
        assert!(matches!(e, Error::Io { .. }) && e.to_string().contains("gone.png"));
    }

    #[test]
    fn round_trip_preserves_cameras() {
        let dir = tempfile::tempdir().unwrap();
        let views: Vec<View> = (0..5)
            .map(|k| {
                let a = 0.9 * k as f64 + 0.1;
                let pose = look_at([4.0 * a.cos(), 4.0 * a.sin(), 1.3], [0.1, -0.2, 0.0], [0.0, 0.0, 1.0]);
                View {
                    name: format!("{k}"),
                    image: RgbImage::filled(10, 7, [0.0, 51.0 / 255.0, 1.0]),
                    camera: Camera::new(10, 7, 11.5, 12.25, 5.0, 3.5, pose, 1.5, 7.0).unwrap(),
                    split: if k < 3 { Split::Train } else { Split::Test },
                }
            })
            .collect();
        let ds = Dataset::new(views, SceneType::Inward, Aabb::cube(1.25), Some(4.0), [1.0, 1.0, 0.0]).unwrap();
        write_dataset(dir.path(), &ds).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.views.len(), 5);
        assert_eq!(back.indices(Split::Test), vec![3, 4]);
        assert_eq!(back.bounds, ds.bounds);
        assert_eq!(back.radius, Some(4.0));
        for (a, b) in ds.views.iter().zip(&back.views) {
            for r in 0..3 {
                for c in 0..4 {
                    assert!((a.camera.pose[r][c] - b.camera.pose[r][c]).abs() <= 1e-12);
                }
            }
            assert_eq!((a.camera.fx, a.camera.fy, a.camera.near), (b.camera.fx, b.camera.fy, b.camera.near));
            assert_eq!(a.image, b.image);
        }
    }
}
