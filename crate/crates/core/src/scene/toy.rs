//! Procedural scenes of soft-edged spheres and boxes, rendered by dense
//! analytic ray marching. The marcher evaluates the primitives directly and
//! does not go through voxel grids, so it serves as ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::render::{look_at, Camera, RadianceField};
use crate::voxel::{Aabb, VoxelGrid};

use super::{Dataset, RgbImage, SceneType, Split, View};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Primitive {
    Sphere {
        center: [f64; 3],
        radius: f64,
        albedo: [f64; 3],
        /// Extinction per world unit inside the primitive.
        density: f64,
    },
    Box {
        center: [f64; 3],
        half_size: [f64; 3],
        albedo: [f64; 3],
        density: f64,
    },
}

impl Primitive {
    fn center(&self) -> [f64; 3] {
        match self {
            Primitive::Sphere { center, .. } | Primitive::Box { center, .. } => *center,
        }
    }

    fn albedo(&self) -> [f64; 3] {
        match self {
            Primitive::Sphere { albedo, .. } | Primitive::Box { albedo, .. } => *albedo,
        }
    }

    fn peak_density(&self) -> f64 {
        match self {
            Primitive::Sphere { density, .. } | Primitive::Box { density, .. } => *density,
        }
    }

    fn half_extent(&self) -> [f64; 3] {
        match self {
            Primitive::Sphere { radius, .. } => [*radius; 3],
            Primitive::Box { half_size, .. } => *half_size,
        }
    }

    fn signed_distance(&self, p: [f64; 3]) -> f64 {
        let c = self.center();
        let d = [p[0] - c[0], p[1] - c[1], p[2] - c[2]];
        match self {
            Primitive::Sphere { radius, .. } => (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt() - radius,
            Primitive::Box { half_size, .. } => {
                let q = [
                    d[0].abs() - half_size[0],
                    d[1].abs() - half_size[1],
                    d[2].abs() - half_size[2],
                ];
                let outside = q.iter().map(|v| v.max(0.0).powi(2)).sum::<f64>().sqrt();
                outside + q[0].max(q[1]).max(q[2]).min(0.0)
            }
        }
    }

    /// Density with a smoothstep falloff of width `edge` across the surface.
    fn density_at(&self, p: [f64; 3], edge: f64) -> f64 {
        let t = (0.5 - self.signed_distance(p) / edge).clamp(0.0, 1.0);
        self.peak_density() * t * t * (3.0 - 2.0 * t)
    }

    fn validate(&self, bound: f64) -> Result<()> {
        let c = self.center();
        let e = self.half_extent();
        let a = self.albedo();
        if self.peak_density() < 0.0 || e.iter().any(|v| !(*v > 0.0)) {
            return invalid(format!("primitive needs positive size and density >= 0: {self:?}"));
        }
        if a.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return invalid(format!("albedo outside [0, 1]: {a:?}"));
        }
        if (0..3).any(|k| (c[k] - e[k]).abs() > bound || (c[k] + e[k]).abs() > bound) {
            return invalid(format!("primitive leaves the scene cube of half-size {bound}: {self:?}"));
        }
        Ok(())
    }
}

/// Cameras evenly spaced in azimuth at a fixed elevation, looking at the
/// origin with `+z` up.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraRing {
    pub count: usize,
    pub radius: f64,
    pub elevation_deg: f64,
    #[serde(default)]
    pub azimuth_offset_deg: f64,
}

impl CameraRing {
    pub fn poses(&self) -> Vec<crate::render::Pose<f64>> {
        let e = self.elevation_deg.to_radians();
        (0..self.count)
            .map(|k| {
                let phi = std::f64::consts::TAU * k as f64 / self.count as f64 + self.azimuth_offset_deg.to_radians();
                let eye = [
                    self.radius * e.cos() * phi.cos(),
                    self.radius * e.cos() * phi.sin(),
                    self.radius * e.sin(),
                ];
                look_at(eye, [0.0; 3], [0.0, 0.0, 1.0])
            })
            .collect()
    }
}

/// Missing fields in a serialized spec take their [`Default`] values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToySceneSpec {
    pub primitives: Vec<Primitive>,
    pub background: [f64; 3],
    pub train_ring: CameraRing,
    pub test_ring: CameraRing,
    pub width: usize,
    pub height: usize,
    /// Horizontal field of view in radians.
    pub camera_angle_x: f64,
    /// The scene is the cube `[-half_extent, half_extent]^3`.
    pub half_extent: f64,
    /// Width of the soft surface transition.
    pub edge: f64,
    /// Ray-marching step of the oracle, world units.
    pub march_step: f64,
    pub seed: u64,
}

impl Default for ToySceneSpec {
    fn default() -> Self {
        Self::random(0, 8)
    }
}

impl ToySceneSpec {
    /// `n` primitives with random placement, size and albedo, alternating
    /// spheres and boxes.
    pub fn random(seed: u64, n: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let primitives = (0..n)
            .map(|k| {
                let albedo = [rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9)];
                let density = rng.gen_range(20.0..60.0);
                if k % 2 == 0 {
                    let radius = rng.gen_range(0.15..0.4);
                    let lim = 1.2 - radius;
                    let center = [0; 3].map(|_| rng.gen_range(-lim..lim));
                    Primitive::Sphere { center, radius, albedo, density }
                } else {
                    let half_size = [0; 3].map(|_| rng.gen_range(0.1..0.3));
                    let center = half_size.map(|h| rng.gen_range(-(1.2 - h)..(1.2 - h)));
                    Primitive::Box { center, half_size, albedo, density }
                }
            })
            .collect();
        Self {
            primitives,
            background: [1.0; 3],
            train_ring: CameraRing {
                count: 16,
                radius: 4.0,
                elevation_deg: 25.0,
                azimuth_offset_deg: 0.0,
            },
            test_ring: CameraRing {
                count: 8,
                radius: 4.0,
                elevation_deg: 35.0,
                azimuth_offset_deg: 11.25,
            },
            width: 64,
            height: 64,
            camera_angle_x: 0.8,
            half_extent: 1.5,
            edge: 0.04,
            march_step: 0.004,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return invalid("toy images need positive size");
        }
        if !(self.half_extent > 0.0 && self.edge > 0.0 && self.march_step > 0.0) {
            return invalid("half_extent, edge and march_step must be positive");
        }
        if !(self.camera_angle_x > 0.0 && self.camera_angle_x < std::f64::consts::PI) {
            return invalid("camera_angle_x must lie in (0, pi)");
        }
        if self.background.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return invalid("background outside [0, 1]");
        }
        for ring in [&self.train_ring, &self.test_ring] {
            if ring.radius <= self.half_extent * 3f64.sqrt() {
                return invalid(format!("camera ring radius {} is inside the scene", ring.radius));
            }
        }
        if self.train_ring.count == 0 {
            return invalid("need at least one training camera");
        }
        for p in &self.primitives {
            p.validate(self.half_extent)?;
        }
        Ok(())
    }

    pub fn bounds(&self) -> Aabb<f64> {
        Aabb::cube(self.half_extent)
    }

    /// Density per world unit and albedo at `p`; the albedo of empty space is
    /// that of the nearest primitive (background when there is none).
    pub fn evaluate(&self, p: [f64; 3]) -> (f64, [f64; 3]) {
        let mut sigma = 0.0;
        let mut acc = [0.0; 3];
        let mut nearest = (f64::INFINITY, self.background);
        for prim in &self.primitives {
            let s = prim.density_at(p, self.edge);
            let a = prim.albedo();
            sigma += s;
            for c in 0..3 {
                acc[c] += s * a[c];
            }
            let d = prim.signed_distance(p);
            if d < nearest.0 {
                nearest = (d, a);
            }
        }
        if sigma > 0.0 {
            (sigma, acc.map(|v| v / sigma))
        } else {
            (0.0, nearest.1)
        }
    }

    /// Pinhole camera at `pose` whose near/far planes bracket the scene cube.
    pub fn camera(&self, pose: crate::render::Pose<f64>, radius: f64) -> Result<Camera<f64>> {
        let focal = 0.5 * self.width as f64 / (0.5 * self.camera_angle_x).tan();
        let reach = self.half_extent * 3f64.sqrt();
        Camera::with_focal(self.width, self.height, focal, pose, (radius - reach).max(1e-3), radius + reach)
    }
}

/// Entry and exit distances of a ray through the cube `[-h, h]^3`.
fn cube_span(o: [f64; 3], d: [f64; 3], h: f64) -> Option<(f64, f64)> {
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    for k in 0..3 {
        if d[k].abs() < 1e-300 {
            if o[k].abs() > h {
                return None;
            }
            continue;
        }
        let a = (-h - o[k]) / d[k];
        let b = (h - o[k]) / d[k];
        t0 = t0.max(a.min(b));
        t1 = t1.min(a.max(b));
    }
    (t1 > t0.max(0.0)).then_some((t0.max(0.0), t1))
}

/// Ground-truth image seen by `camera`, marching with the given step.
pub fn render_oracle(spec: &ToySceneSpec, camera: &Camera<f64>, step: f64) -> Result<Vec<[f64; 3]>> {
    if !(step > 0.0) {
        return invalid("oracle step must be positive");
    }
    let bg = spec.background;
    let pixels: Vec<(usize, usize)> = (0..camera.height)
        .flat_map(|j| (0..camera.width).map(move |i| (i, j)))
        .collect();
    Ok(pixels
        .par_iter()
        .map(|&(i, j)| {
            let ray = camera.ray_unchecked(i, j);
            let Some((a, b)) = cube_span(ray.origin, ray.dir, spec.half_extent) else {
                return bg;
            };
            let n = ((b - a) / step).ceil().max(1.0) as usize;
            let h = (b - a) / n as f64;
            let mut trans = 1.0;
            let mut col = [0.0; 3];
            for k in 0..n {
                let t = a + (k as f64 + 0.5) * h;
                let p = [
                    ray.origin[0] + t * ray.dir[0],
                    ray.origin[1] + t * ray.dir[1],
                    ray.origin[2] + t * ray.dir[2],
                ];
                let (sigma, alb) = spec.evaluate(p);
                if sigma == 0.0 {
                    continue;
                }
                let w = trans * (1.0 - (-sigma * h).exp());
                for c in 0..3 {
                    col[c] += w * alb[c];
                }
                trans *= (-sigma * h).exp();
                if trans < 1e-12 {
                    trans = 0.0;
                    break;
                }
            }
            [0, 1, 2].map(|c| col[c] + trans * bg[c])
        })
        .collect())
}

/// Generated dataset plus the spec it came from.
#[derive(Clone, Debug)]
pub struct ToyScene {
    pub spec: ToySceneSpec,
    pub dataset: Dataset,
}

/// Renders the training ring and the held-out ring with the oracle.
pub fn generate_toy_scene(spec: &ToySceneSpec) -> Result<ToyScene> {
    spec.validate()?;
    let mut views = Vec::new();
    for (ring, split) in [(&spec.train_ring, Split::Train), (&spec.test_ring, Split::Test)] {
        for (k, pose) in ring.poses().into_iter().enumerate() {
            let camera = spec.camera(pose, ring.radius)?;
            let px = render_oracle(spec, &camera, spec.march_step)?;
            let name = match split {
                Split::Train => format!("train_{k}"),
                Split::Test => format!("test_{k}"),
            };
            views.push(View {
                name,
                image: RgbImage::from_f64(spec.width, spec.height, &px)?,
                camera,
                split,
            });
        }
    }
    let dataset = Dataset::new(
        views,
        SceneType::Inward,
        spec.bounds(),
        Some(spec.train_ring.radius),
        spec.background,
    )?;
    Ok(ToyScene {
        spec: spec.clone(),
        dataset,
    })
}

/// Explicit-color voxel field sampled from the primitives at voxel centers.
/// Empty space gets a tiny density so every raw value stays finite.
pub fn toy_to_field(spec: &ToySceneSpec, resolution: [usize; 3], alpha_init: f64) -> Result<RadianceField<f64>> {
    spec.validate()?;
    let mut field = RadianceField::explicit(resolution, spec.bounds(), alpha_init)?;
    let unit = field.distance_unit;
    let shape = *field.density.shape();
    let [nx, ny, nz] = resolution;
    let mut density = Vec::with_capacity(shape.num_voxels());
    let mut color = vec![0.0; 3 * shape.num_voxels()];
    let nv = shape.num_voxels();
    let logit = |c: f64| {
        let c = c.clamp(1e-3, 1.0 - 1e-3);
        (c / (1.0 - c)).ln()
    };
    for x in 0..nx {
        for y in 0..ny {
            for z in 0..nz {
                let (sigma, alb) = spec.evaluate(shape.voxel_center(x, y, z));
                density.push(field.activation.inverse((sigma * unit).max(1e-4)));
                let v = density.len() - 1;
                for c in 0..3 {
                    color[c * nv + v] = logit(alb[c]);
                }
            }
        }
    }
    field.density = VoxelGrid::from_values(1, resolution, spec.bounds(), density)?;
    field.color = VoxelGrid::from_values(3, resolution, spec.bounds(), color)?;
    field.validate()?;
    Ok(field)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(primitives: Vec<Primitive>) -> ToySceneSpec {
        let mut s = ToySceneSpec::random(0, 0);
        s.primitives = primitives;
        s.width = 24;
        s.height = 24;
        s.train_ring.count = 4;
        s.test_ring.count = 2;
        s
    }

    #[test]
    fn default_spec_is_valid() {
        let s = ToySceneSpec::default();
        assert_eq!(s.primitives.len(), 8);
        s.validate().unwrap();
    }

    #[test]
    fn empty_scene_is_background() {
        let mut s = small(vec![]);
        s.background = [0.2, 0.3, 0.4];
        let t = generate_toy_scene(&s).unwrap();
        assert_eq!(t.dataset.views.len(), 6);
        for v in &t.dataset.views {
            assert!(v.image.pixels.iter().all(|p| *p == [0.2, 0.3, 0.4]));
        }
    }

    #[test]
    fn opaque_sphere_fills_the_center_pixel() {
        let albedo = [0.7, 0.2, 0.4];
        let s = small(vec![Primitive::Sphere { center: [0.0; 3], radius: 0.5, albedo, density: 500.0 }]);
        let t = generate_toy_scene(&s).unwrap();
        for v in &t.dataset.views {
            let c = v.image.get(12, 12);
            for k in 0..3 {
                assert!((c[k] as f64 - albedo[k]).abs() < 1e-6, "{c:?}");
            }
        }
    }

    #[test]
    fn out_of_bounds_primitive_is_rejected() {
        let s = small(vec![Primitive::Sphere { center: [1.4, 0.0, 0.0], radius: 0.3, albedo: [0.5; 3], density: 1.0 }]);
        assert!(s.validate().is_err());
    }

    #[test]
    fn box_signed_distance() {
        let b = Primitive::Box { center: [0.0; 3], half_size: [1.0, 2.0, 3.0], albedo: [0.0; 3], density: 1.0 };
        assert!((b.signed_distance([2.0, 0.0, 0.0]) - 1.0).abs() < 1e-15);
        assert!((b.signed_distance([0.0, 0.0, 0.0]) + 1.0).abs() < 1e-15);
        assert!((b.signed_distance([2.0, 3.0, 0.0]) - 2f64.sqrt()).abs() < 1e-15);
    }
}
