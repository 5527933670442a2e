//! Pinhole cameras and ray generation.
//!
//! Conventions: right-handed world, the camera looks down its local `-z`
//! axis with `+y` up, and the image origin is the top-left pixel. Pixel
//! `(i, j)` is the image-plane point `(i, j)`, so a camera with
//! `cx = width / 2` sends pixel `(width / 2, height / 2)` along the optical
//! axis.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::num::{cast3, normalize, Real, Vec3};

/// Camera-to-world rigid transform, rows of a 3x4 matrix `[R | t]`.
pub type Pose<T> = [[T; 4]; 3];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera<T> {
    pub width: usize,
    pub height: usize,
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub pose: Pose<T>,
    pub near: T,
    pub far: T,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray<T> {
    pub origin: Vec3<T>,
    pub dir: Vec3<T>,
    pub near: T,
    pub far: T,
}

impl<T: Real> Camera<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        width: usize,
        height: usize,
        fx: T,
        fy: T,
        cx: T,
        cy: T,
        pose: Pose<T>,
        near: T,
        far: T,
    ) -> Result<Self> {
        let cam = Self {
            width,
            height,
            fx,
            fy,
            cx,
            cy,
            pose,
            near,
            far,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Square pixels, principal point at the image center.
    pub fn with_focal(
        width: usize,
        height: usize,
        focal: T,
        pose: Pose<T>,
        near: T,
        far: T,
    ) -> Result<Self> {
        let half = T::of(0.5);
        Self::new(
            width,
            height,
            focal,
            focal,
            T::of(width as f64) * half,
            T::of(height as f64) * half,
            pose,
            near,
            far,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return invalid("camera image must be nonempty");
        }
        if !(self.fx > T::zero() && self.fy > T::zero()) {
            return invalid("camera focal length must be positive");
        }
        if !(self.near < self.far) || self.near < T::zero() {
            return invalid(format!(
                "camera needs 0 <= near < far, got {} and {}",
                self.near, self.far
            ));
        }
        if self.pose.iter().flatten().any(|v| !v.is_finite()) {
            return invalid("camera pose must be finite");
        }
        let tol = T::of(1e-6);
        for a in 0..3 {
            for b in 0..3 {
                let d: T = (0..3).map(|r| self.pose[r][a] * self.pose[r][b]).sum();
                let expect = if a == b { T::one() } else { T::zero() };
                if (d - expect).abs() > tol {
                    return invalid("camera rotation is not orthonormal");
                }
            }
        }
        Ok(())
    }

    pub fn origin(&self) -> Vec3<T> {
        [self.pose[0][3], self.pose[1][3], self.pose[2][3]]
    }

    /// Column `a` of the rotation (camera axis `a` in world coordinates).
    pub fn axis(&self, a: usize) -> Vec3<T> {
        [self.pose[0][a], self.pose[1][a], self.pose[2][a]]
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    /// Ray through pixel `(i, j)` with unit direction.
    pub fn ray(&self, i: usize, j: usize) -> Result<Ray<T>> {
        if i >= self.width || j >= self.height {
            return invalid(format!(
                "pixel ({i}, {j}) outside {}x{} image",
                self.width, self.height
            ));
        }
        Ok(self.ray_unchecked(i, j))
    }

    pub(crate) fn ray_unchecked(&self, i: usize, j: usize) -> Ray<T> {
        let local = [
            (T::of(i as f64) - self.cx) / self.fx,
            -(T::of(j as f64) - self.cy) / self.fy,
            -T::one(),
        ];
        let mut d = [T::zero(); 3];
        for (r, out) in d.iter_mut().enumerate() {
            *out = self.pose[r][0] * local[0] + self.pose[r][1] * local[1] + self.pose[r][2] * local[2];
        }
        Ray {
            origin: self.origin(),
            dir: normalize(d),
            near: self.near,
            far: self.far,
        }
    }

    pub fn cast<U: Real>(&self) -> Camera<U> {
        let c = |v: T| U::of(v.as_f64());
        Camera {
            width: self.width,
            height: self.height,
            fx: c(self.fx),
            fy: c(self.fy),
            cx: c(self.cx),
            cy: c(self.cy),
            pose: self.pose.map(|row| row.map(c)),
            near: c(self.near),
            far: c(self.far),
        }
    }
}

impl<T: Real> Ray<T> {
    pub fn at(&self, t: T) -> Vec3<T> {
        [
            self.origin[0] + t * self.dir[0],
            self.origin[1] + t * self.dir[1],
            self.origin[2] + t * self.dir[2],
        ]
    }

    pub fn cast<U: Real>(&self) -> Ray<U> {
        Ray {
            origin: cast3(self.origin),
            dir: cast3(self.dir),
            near: U::of(self.near.as_f64()),
            far: U::of(self.far.as_f64()),
        }
    }
}

/// One ray per `(i, j)` pixel index.
pub fn generate_rays<T: Real>(camera: &Camera<T>, pixels: &[(usize, usize)]) -> Result<Vec<Ray<T>>> {
    pixels.iter().map(|&(i, j)| camera.ray(i, j)).collect()
}

/// Forward-facing normalized device coordinates.
///
/// A camera-space point `(x, y, z)` with `z <= -near` maps to
/// `(-fx/(W/2) * x/z, -fy/(H/2) * y/z, 1 + 2 near / z)`, sending the near
/// plane to `z = -1` and infinity to `z = 1`. The warp assumes the rays are
/// expressed in the frame of the reference camera (identity rotation,
/// looking down `-z`), as is usual for forward-facing captures.
pub fn ndc_point<T: Real>(p: Vec3<T>, camera: &Camera<T>) -> Vec3<T> {
    let (ax, ay) = ndc_scales(camera);
    let two = T::of(2.0);
    [
        -ax * p[0] / p[2],
        -ay * p[1] / p[2],
        T::one() + two * camera.near / p[2],
    ]
}

/// Inverse of [`ndc_point`] for `ndc z < 1`.
pub fn ndc_unpoint<T: Real>(q: Vec3<T>, camera: &Camera<T>) -> Vec3<T> {
    let (ax, ay) = ndc_scales(camera);
    let z = T::of(2.0) * camera.near / (q[2] - T::one());
    [-q[0] * z / ax, -q[1] * z / ay, z]
}

fn ndc_scales<T: Real>(camera: &Camera<T>) -> (T, T) {
    let half = T::of(0.5);
    (
        camera.fx / (T::of(camera.width as f64) * half),
        camera.fy / (T::of(camera.height as f64) * half),
    )
}

/// Warps a world ray into NDC. The origin is first moved onto the near
/// plane; the returned ray spans `t` in `[0, 1)` and its direction is not
/// normalized.
pub fn ndc_warp<T: Real>(ray: &Ray<T>, camera: &Camera<T>) -> Result<Ray<T>> {
    let n = camera.near;
    if !(ray.dir[2] < T::zero()) {
        return invalid("ray does not travel towards -z and never crosses the near plane");
    }
    let t = -(n + ray.origin[2]) / ray.dir[2];
    let o = ray.at(t);
    if !(o[2] < T::zero()) {
        return invalid("near plane must lie in front of the camera (near > 0)");
    }
    let (ax, ay) = ndc_scales(camera);
    let two = T::of(2.0);
    let origin = [
        -ax * o[0] / o[2],
        -ay * o[1] / o[2],
        T::one() + two * n / o[2],
    ];
    let d = ray.dir;
    let dir = [
        -ax * (d[0] / d[2] - o[0] / o[2]),
        -ay * (d[1] / d[2] - o[1] / o[2]),
        -two * n / o[2],
    ];
    Ok(Ray {
        origin,
        dir,
        near: T::zero(),
        far: T::one(),
    })
}

/// Camera-to-world pose looking from `eye` towards `target`.
pub fn look_at<T: Real>(eye: Vec3<T>, target: Vec3<T>, up: Vec3<T>) -> Pose<T> {
    use crate::num::{cross, norm, sub};
    let back = normalize(sub(eye, target));
    let mut right = cross(up, back);
    if norm(right) < T::of(1e-9) {
        // Up is parallel to the view axis; pick any perpendicular.
        let alt = if back[0].abs() < T::of(0.9) {
            [T::one(), T::zero(), T::zero()]
        } else {
            [T::zero(), T::one(), T::zero()]
        };
        right = cross(alt, back);
    }
    let right = normalize(right);
    let true_up = cross(back, right);
    [
        [right[0], true_up[0], back[0], eye[0]],
        [right[1], true_up[1], back[1], eye[1]],
        [right[2], true_up[2], back[2], eye[2]],
    ]
}

pub fn identity_pose<T: Real>() -> Pose<T> {
    let (o, z) = (T::one(), T::zero());
    [[o, z, z, z], [z, o, z, z], [z, z, o, z]]
}
