use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::num::Real;
use crate::voxel::VoxelGrid;

use super::LossWeights;

/// Elementwise penalty between a voxel and a neighbor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Penalty {
    L1,
    L2,
    /// `d^2 / 2` for `|d| <= delta`, `delta (|d| - delta / 2)` beyond.
    Huber { delta: f64 },
}

impl Penalty {
    #[inline]
    pub fn value<T: Real>(&self, d: T) -> T {
        match *self {
            Penalty::L1 => d.abs(),
            Penalty::L2 => d * d,
            Penalty::Huber { delta } => {
                let delta = T::of(delta);
                let a = d.abs();
                if a <= delta {
                    T::of(0.5) * d * d
                } else {
                    delta * (a - T::of(0.5) * delta)
                }
            }
        }
    }

    #[inline]
    pub fn derivative<T: Real>(&self, d: T) -> T {
        match *self {
            Penalty::L1 => {
                if d > T::zero() {
                    T::one()
                } else if d < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            }
            Penalty::L2 => T::of(2.0) * d,
            Penalty::Huber { delta } => {
                let delta = T::of(delta);
                d.max(-delta).min(delta)
            }
        }
    }
}

impl FromStr for Penalty {
    type Err = Error;

    /// `l1`, `l2`, `huber` (threshold 1) or `huber:<delta>`.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "l1" => Ok(Penalty::L1),
            "l2" => Ok(Penalty::L2),
            "huber" => Ok(Penalty::Huber { delta: 1.0 }),
            other => {
                if let Some(d) = other.strip_prefix("huber:") {
                    let delta: f64 = d
                        .parse()
                        .map_err(|_| Error::Config(format!("bad huber threshold {d:?}")))?;
                    if delta > 0.0 {
                        return Ok(Penalty::Huber { delta });
                    }
                }
                Err(Error::Config(format!("unknown penalty {s:?}")))
            }
        }
    }
}

/// Number of existing axis neighbors of every spatial voxel.
fn neighbor_counts(res: [usize; 3]) -> Vec<u8> {
    let [nx, ny, nz] = res;
    let axis = |i: usize, n: usize| (i > 0) as u8 + (i + 1 < n) as u8;
    let mut k = Vec::with_capacity(nx * ny * nz);
    for x in 0..nx {
        for y in 0..ny {
            for z in 0..nz {
                k.push(axis(x, nx) + axis(y, ny) + axis(z, nz));
            }
        }
    }
    k
}

/// Visits every unordered neighbor pair `(v, v + e_axis)` once, as spatial
/// indices.
#[inline]
fn for_each_pair(res: [usize; 3], mut f: impl FnMut(usize, usize)) {
    let [nx, ny, nz] = res;
    let (sx, sy) = (ny * nz, nz);
    for x in 0..nx {
        for y in 0..ny {
            for z in 0..nz {
                let v = x * sx + y * sy + z;
                if x + 1 < nx {
                    f(v, v + sx);
                }
                if y + 1 < ny {
                    f(v, v + sy);
                }
                if z + 1 < nz {
                    f(v, v + 1);
                }
            }
        }
    }
}

/// `Delta(v)` for every grid element: mean penalty between the element and
/// its existing axis neighbors in the same channel. Grid layout.
pub fn neighbor_delta<T: Real>(grid: &VoxelGrid<T>, penalty: Penalty) -> Vec<T> {
    let res = grid.resolution();
    let nv = grid.num_voxels();
    let k = neighbor_counts(res);
    let mut out = vec![T::zero(); grid.values().len()];
    for c in 0..grid.channels() {
        let g = &grid.values()[c * nv..(c + 1) * nv];
        let o = &mut out[c * nv..(c + 1) * nv];
        for_each_pair(res, |v, n| {
            let p = penalty.value(g[v] - g[n]);
            o[v] += p;
            o[n] += p;
        });
        for (ov, kv) in o.iter_mut().zip(&k) {
            *ov /= T::of(*kv as f64);
        }
    }
    out
}

/// Weighted total variation `sum_v w_v Delta(v)` over all channels with a
/// per-spatial-voxel weight (`None` means 1). Returns loss and gradient.
fn weighted_tv<T: Real>(grid: &VoxelGrid<T>, penalty: Penalty, weight: Option<&[T]>) -> (T, Vec<T>) {
    let res = grid.resolution();
    let nv = grid.num_voxels();
    let inv_k: Vec<T> = neighbor_counts(res)
        .iter()
        .enumerate()
        .map(|(v, &k)| weight.map_or(T::one(), |w| w[v]) / T::of(k as f64))
        .collect();
    let mut loss = T::zero();
    let mut grad = vec![T::zero(); grid.values().len()];
    for c in 0..grid.channels() {
        let g = &grid.values()[c * nv..(c + 1) * nv];
        let gr = &mut grad[c * nv..(c + 1) * nv];
        for_each_pair(res, |v, n| {
            let d = g[v] - g[n];
            let s = inv_k[v] + inv_k[n];
            loss += penalty.value(d) * s;
            let dp = penalty.derivative(d) * s;
            gr[v] += dp;
            gr[n] -= dp;
        });
    }
    (loss, grad)
}

/// `sum_v Delta(v)`, summed over channels, with its exact gradient.
pub fn tv_loss<T: Real>(grid: &VoxelGrid<T>, penalty: Penalty) -> (T, Vec<T>) {
    weighted_tv(grid, penalty, None)
}

/// Per spatial voxel: mean over channels and existing neighbors of the L1
/// difference between sigmoid-activated feature values. Lies in `[0, 1)`.
pub fn color_awareness<T: Real>(feature: &VoxelGrid<T>) -> Vec<T> {
    let res = feature.resolution();
    let nv = feature.num_voxels();
    let k = neighbor_counts(res);
    let mut acc = vec![T::zero(); nv];
    let mut act = vec![T::zero(); nv];
    for c in 0..feature.channels() {
        let g = &feature.values()[c * nv..(c + 1) * nv];
        for (a, v) in act.iter_mut().zip(g) {
            *a = v.sigmoid();
        }
        for_each_pair(res, |v, n| {
            let d = (act[v] - act[n]).abs();
            acc[v] += d;
            acc[n] += d;
        });
    }
    let ch = T::of(feature.channels() as f64);
    for (a, kv) in acc.iter_mut().zip(&k) {
        *a /= ch * T::of(*kv as f64);
    }
    acc
}

/// `sum_v exp(-F_CA(feature, v)) Delta_huber(density, v)`. The weight is a
/// constant for differentiation; only the density gradient is returned.
pub fn catv_loss<T: Real>(
    density: &VoxelGrid<T>,
    feature: &VoxelGrid<T>,
    huber_delta: f64,
) -> Result<(T, Vec<T>)> {
    if density.resolution() != feature.resolution() {
        return invalid(format!(
            "density {:?} and feature {:?} resolutions differ",
            density.resolution(),
            feature.resolution()
        ));
    }
    if !(huber_delta > 0.0) {
        return invalid("huber threshold must be positive");
    }
    let w: Vec<T> = color_awareness(feature).into_iter().map(|f| (-f).exp()).collect();
    Ok(weighted_tv(density, Penalty::Huber { delta: huber_delta }, Some(&w)))
}

/// Weighted components of the voxel smoothness loss and their gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct CavsTerms<T> {
    pub tv_feature: T,
    pub tv_density: T,
    pub catv: T,
    pub grad_density: Vec<T>,
    pub grad_feature: Vec<T>,
}

impl<T: Real> CavsTerms<T> {
    pub fn total(&self) -> T {
        self.tv_feature + self.tv_density + self.catv
    }
}

/// `l_tvf TV(feature) + l_tvd TV(density) + l_catv CATV`. Terms with zero
/// weight are skipped.
pub fn cavs_loss<T: Real>(
    density: &VoxelGrid<T>,
    feature: &VoxelGrid<T>,
    weights: &LossWeights,
    tv_penalty: Penalty,
    catv_huber_delta: f64,
) -> Result<CavsTerms<T>> {
    weights.validate()?;
    let mut out = CavsTerms {
        tv_feature: T::zero(),
        tv_density: T::zero(),
        catv: T::zero(),
        grad_density: vec![T::zero(); density.values().len()],
        grad_feature: vec![T::zero(); feature.values().len()],
    };
    let axpy = |dst: &mut [T], a: T, src: &[T]| {
        for (d, s) in dst.iter_mut().zip(src) {
            *d += a * *s;
        }
    };
    if weights.tv_feature > 0.0 {
        let l = T::of(weights.tv_feature);
        let (v, g) = tv_loss(feature, tv_penalty);
        out.tv_feature = l * v;
        axpy(&mut out.grad_feature, l, &g);
    }
    if weights.tv_density > 0.0 {
        let l = T::of(weights.tv_density);
        let (v, g) = tv_loss(density, tv_penalty);
        out.tv_density = l * v;
        axpy(&mut out.grad_density, l, &g);
    }
    if weights.catv > 0.0 {
        let l = T::of(weights.catv);
        let (v, g) = catv_loss(density, feature, catv_huber_delta)?;
        out.catv = l * v;
        axpy(&mut out.grad_density, l, &g);
    }
    Ok(out)
}
