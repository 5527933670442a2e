//! Sampling of unobserved camera poses for the depth-smoothness term.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::num::{add, cross, dot, normalize, scale, sub, Vec3};
use crate::render::{look_at, Pose};

/// Rectangle of camera positions spanned by two orthonormal axes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneSpec {
    pub origin: Vec3<f64>,
    pub u_axis: Vec3<f64>,
    pub v_axis: Vec3<f64>,
    pub min: [f64; 2],
    pub max: [f64; 2],
    /// Point every sampled camera looks at.
    pub focus: Vec3<f64>,
    pub up: Vec3<f64>,
}

impl PlaneSpec {
    /// Plane through the mean input position, spanned by the mean right and up
    /// axes, bounded by the inputs' extent along them. The focus point lies
    /// `focus_depth` in front of the mean position.
    pub fn from_poses(poses: &[Pose<f64>], focus_depth: f64) -> Result<Self> {
        if poses.is_empty() {
            return invalid("plane sampler needs at least one input pose");
        }
        let n = poses.len() as f64;
        let mean = |col: usize| {
            let mut s = [0.0; 3];
            for p in poses {
                for r in 0..3 {
                    s[r] += p[r][col] / n;
                }
            }
            s
        };
        let origin = mean(3);
        let back = normalize(mean(2));
        let up0 = mean(1);
        let right = normalize(cross(up0, back));
        let up = cross(back, right);
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for p in poses {
            let rel = sub([p[0][3], p[1][3], p[2][3]], origin);
            for (k, axis) in [right, up].iter().enumerate() {
                let c = dot(rel, *axis);
                min[k] = min[k].min(c);
                max[k] = max[k].max(c);
            }
        }
        let spec = Self {
            origin,
            u_axis: right,
            v_axis: up,
            min,
            max,
            focus: sub(origin, scale(back, focus_depth)),
            up,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self
            .origin
            .iter()
            .chain(&self.u_axis)
            .chain(&self.v_axis)
            .chain(&self.min)
            .chain(&self.max)
            .chain(&self.focus)
            .all(|v| v.is_finite());
        if !finite || self.min[0] > self.max[0] || self.min[1] > self.max[1] {
            return invalid(format!("bad plane boundaries {:?}..{:?}", self.min, self.max));
        }
        Ok(())
    }

    pub fn position(&self, a: f64, b: f64) -> Vec3<f64> {
        add(self.origin, add(scale(self.u_axis, a), scale(self.v_axis, b)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum PoseMode {
    /// Upper hemisphere (`z >= 0`) of the given radius around `target`.
    Hemisphere { radius: f64, target: Vec3<f64> },
    Plane(PlaneSpec),
    /// Blend of two random input poses.
    Interpolate { poses: Vec<Pose<f64>> },
}

#[derive(Clone, Debug)]
pub struct PoseSampler {
    mode: PoseMode,
    rng: ChaCha8Rng,
}

impl PoseSampler {
    pub fn new(mode: PoseMode, seed: u64) -> Result<Self> {
        match &mode {
            PoseMode::Hemisphere { radius, .. } if !(*radius > 0.0) || !radius.is_finite() => {
                return invalid(format!("hemisphere radius must be positive, got {radius}"));
            }
            PoseMode::Plane(p) => p.validate()?,
            PoseMode::Interpolate { poses } if poses.len() < 2 => {
                return invalid("interpolation needs at least two input poses");
            }
            _ => {}
        }
        Ok(Self {
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn mode(&self) -> &PoseMode {
        &self.mode
    }

    pub fn sample_pose(&mut self) -> Result<Pose<f64>> {
        let rng = &mut self.rng;
        match &self.mode {
            PoseMode::Hemisphere { radius, target } => {
                // uniform in z gives uniform area on the sphere
                let z: f64 = rng.gen_range(0.0..=1.0);
                let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                let r = (1.0 - z * z).max(0.0).sqrt();
                let dir = [r * phi.cos(), r * phi.sin(), z];
                let eye = add(*target, scale(dir, *radius));
                Ok(look_at(eye, *target, [0.0, 0.0, 1.0]))
            }
            PoseMode::Plane(p) => {
                let a = sample_range(rng, p.min[0], p.max[0]);
                let b = sample_range(rng, p.min[1], p.max[1]);
                Ok(look_at(p.position(a, b), p.focus, p.up))
            }
            PoseMode::Interpolate { poses } => {
                if poses.len() < 2 {
                    return invalid("interpolation needs at least two input poses");
                }
                let i = rng.gen_range(0..poses.len());
                let mut j = rng.gen_range(0..poses.len() - 1);
                if j >= i {
                    j += 1;
                }
                let u: f64 = rng.gen_range(0.0..=1.0);
                Ok(interpolate_poses(&poses[i], &poses[j], u))
            }
        }
    }
}

fn sample_range(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

type Quat = [f64; 4];

fn quat_from_pose(p: &Pose<f64>) -> Quat {
    let m = |r: usize, c: usize| p[r][c];
    let tr = m(0, 0) + m(1, 1) + m(2, 2);
    let q = if tr > 0.0 {
        let s = (tr + 1.0).sqrt() * 2.0;
        [0.25 * s, (m(2, 1) - m(1, 2)) / s, (m(0, 2) - m(2, 0)) / s, (m(1, 0) - m(0, 1)) / s]
    } else if m(0, 0) > m(1, 1) && m(0, 0) > m(2, 2) {
        let s = (1.0 + m(0, 0) - m(1, 1) - m(2, 2)).sqrt() * 2.0;
        [(m(2, 1) - m(1, 2)) / s, 0.25 * s, (m(0, 1) + m(1, 0)) / s, (m(0, 2) + m(2, 0)) / s]
    } else if m(1, 1) > m(2, 2) {
        let s = (1.0 + m(1, 1) - m(0, 0) - m(2, 2)).sqrt() * 2.0;
        [(m(0, 2) - m(2, 0)) / s, (m(0, 1) + m(1, 0)) / s, 0.25 * s, (m(1, 2) + m(2, 1)) / s]
    } else {
        let s = (1.0 + m(2, 2) - m(0, 0) - m(1, 1)).sqrt() * 2.0;
        [(m(1, 0) - m(0, 1)) / s, (m(0, 2) + m(2, 0)) / s, (m(1, 2) + m(2, 1)) / s, 0.25 * s]
    };
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    q.map(|v| v / n)
}

fn rotation_from_quat(q: Quat) -> [[f64; 3]; 3] {
    let [w, x, y, z] = q;
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

fn slerp(a: Quat, mut b: Quat, u: f64) -> Quat {
    let mut d: f64 = (0..4).map(|k| a[k] * b[k]).sum();
    if d < 0.0 {
        b = b.map(|v| -v);
        d = -d;
    }
    let (wa, wb) = if d > 0.9995 {
        (1.0 - u, u)
    } else {
        let theta = d.min(1.0).acos();
        let s = theta.sin();
        (((1.0 - u) * theta).sin() / s, (u * theta).sin() / s)
    };
    let q: Quat = std::array::from_fn(|k| wa * a[k] + wb * b[k]);
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    q.map(|v| v / n)
}

/// Rotation slerped and translation lerped between two poses; the endpoints
/// are returned exactly.
pub fn interpolate_poses(a: &Pose<f64>, b: &Pose<f64>, u: f64) -> Pose<f64> {
    if u <= 0.0 {
        return *a;
    }
    if u >= 1.0 {
        return *b;
    }
    let r = rotation_from_quat(slerp(quat_from_pose(a), quat_from_pose(b), u));
    std::array::from_fn(|row| {
        let t = (1.0 - u) * a[row][3] + u * b[row][3];
        [r[row][0], r[row][1], r[row][2], t]
    })
}
