use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::num::{Real, Vec3};

/// Axis-aligned box in world units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb<T> {
    pub min: Vec3<T>,
    pub max: Vec3<T>,
}

impl<T: Real> Aabb<T> {
    pub fn new(min: Vec3<T>, max: Vec3<T>) -> Result<Self> {
        for a in 0..3 {
            if !(min[a].is_finite() && max[a].is_finite()) || min[a] >= max[a] {
                return invalid(format!(
                    "bounds min must be below max on every axis (axis {a}: {} vs {})",
                    min[a], max[a]
                ));
            }
        }
        Ok(Self { min, max })
    }

    pub fn cube(half: T) -> Self {
        Self {
            min: [-half; 3],
            max: [half; 3],
        }
    }

    pub fn extent(&self) -> Vec3<T> {
        [
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        ]
    }

    pub fn contains(&self, p: Vec3<T>) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    /// Slab intersection of the ray `origin + t * dir` with the box. Returns
    /// the parametric entry and exit distances, or `None` on a miss. Axis
    /// parallel directions rely on IEEE infinities; an origin lying exactly on
    /// a slab plane of a parallel axis counts as inside.
    pub fn intersect_ray(&self, origin: Vec3<T>, dir: Vec3<T>) -> Option<(T, T)> {
        let mut t0 = T::neg_infinity();
        let mut t1 = T::infinity();
        for a in 0..3 {
            if dir[a] == T::zero() {
                if origin[a] < self.min[a] || origin[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let inv = T::one() / dir[a];
            let mut near = (self.min[a] - origin[a]) * inv;
            let mut far = (self.max[a] - origin[a]) * inv;
            if near > far {
                std::mem::swap(&mut near, &mut far);
            }
            t0 = t0.max(near);
            t1 = t1.min(far);
        }
        if t0 <= t1 {
            Some((t0, t1))
        } else {
            None
        }
    }

    pub fn cast<U: Real>(&self) -> Aabb<U> {
        Aabb {
            min: crate::num::cast3(self.min),
            max: crate::num::cast3(self.max),
        }
    }
}

/// Channel count, resolution and bounds of a grid without its values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridShape<T> {
    pub channels: usize,
    pub resolution: [usize; 3],
    pub bounds: Aabb<T>,
}

impl<T: Real> GridShape<T> {
    pub fn new(channels: usize, resolution: [usize; 3], bounds: Aabb<T>) -> Result<Self> {
        if channels == 0 {
            return invalid("grid needs at least one channel");
        }
        if resolution.iter().any(|&n| n < 2) {
            return invalid(format!(
                "every grid axis needs at least two samples, got {resolution:?}"
            ));
        }
        Aabb::new(bounds.min, bounds.max)?;
        Ok(Self {
            channels,
            resolution,
            bounds,
        })
    }

    pub fn num_voxels(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn len(&self) -> usize {
        self.channels * self.num_voxels()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Spatial distance between adjacent samples on each axis.
    pub fn voxel_size(&self) -> Vec3<T> {
        let e = self.bounds.extent();
        [
            e[0] / T::of((self.resolution[0] - 1) as f64),
            e[1] / T::of((self.resolution[1] - 1) as f64),
            e[2] / T::of((self.resolution[2] - 1) as f64),
        ]
    }

    /// World position of voxel `(x, y, z)`. Voxel centers sit on a lattice
    /// whose first and last samples lie on the bounds.
    pub fn voxel_center(&self, x: usize, y: usize, z: usize) -> Vec3<T> {
        let s = self.voxel_size();
        [
            self.bounds.min[0] + s[0] * T::of(x as f64),
            self.bounds.min[1] + s[1] * T::of(y as f64),
            self.bounds.min[2] + s[2] * T::of(z as f64),
        ]
    }

    #[inline]
    pub fn spatial_index(&self, x: usize, y: usize, z: usize) -> usize {
        let [_, ny, nz] = self.resolution;
        (x * ny + y) * nz + z
    }

    /// Interpolation stencil for a world point; out-of-bounds points clamp
    /// to the boundary cell.
    #[inline]
    pub fn stencil(&self, p: Vec3<T>) -> Stencil<T> {
        let [nx, ny, nz] = self.resolution;
        let mut cell = [0usize; 3];
        let mut frac = [T::zero(); 3];
        let dims = [nx, ny, nz];
        for a in 0..3 {
            let last = T::of((dims[a] - 1) as f64);
            let u = (p[a] - self.bounds.min[a]) / (self.bounds.max[a] - self.bounds.min[a]) * last;
            let u = u.max(T::zero()).min(last);
            let i = u.floor().to_usize().unwrap_or(0).min(dims[a] - 2);
            cell[a] = i;
            frac[a] = u - T::of(i as f64);
        }
        let base = self.spatial_index(cell[0], cell[1], cell[2]);
        let sx = ny * nz;
        let sy = nz;
        let one = T::one();
        let mut idx = [0usize; 8];
        let mut w = [T::zero(); 8];
        for k in 0..8 {
            let (dx, dy, dz) = ((k >> 2) & 1, (k >> 1) & 1, k & 1);
            idx[k] = base + dx * sx + dy * sy + dz;
            let wx = if dx == 1 { frac[0] } else { one - frac[0] };
            let wy = if dy == 1 { frac[1] } else { one - frac[1] };
            let wz = if dz == 1 { frac[2] } else { one - frac[2] };
            w[k] = wx * wy * wz;
        }
        Stencil { idx, w }
    }
}

/// The eight corner voxels (spatial indices) of a trilinear lookup and their
/// weights. Corner `k` has offsets `(k>>2 & 1, k>>1 & 1, k & 1)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stencil<T> {
    pub idx: [usize; 8],
    pub w: [T; 8],
}

/// Dense `C x Nx x Ny x Nz` grid.
///
/// Values are stored channel-major, then x, y, z row-major:
/// `index = ((c * Nx + x) * Ny + y) * Nz + z`.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid<T> {
    shape: GridShape<T>,
    values: Vec<T>,
}

impl<T: Real> VoxelGrid<T> {
    pub fn filled(
        channels: usize,
        resolution: [usize; 3],
        bounds: Aabb<T>,
        value: T,
    ) -> Result<Self> {
        if !value.is_finite() {
            return invalid("grid fill value must be finite");
        }
        let shape = GridShape::new(channels, resolution, bounds)?;
        Ok(Self {
            values: vec![value; shape.len()],
            shape,
        })
    }

    pub fn zeros(channels: usize, resolution: [usize; 3], bounds: Aabb<T>) -> Result<Self> {
        Self::filled(channels, resolution, bounds, T::zero())
    }

    pub fn from_values(
        channels: usize,
        resolution: [usize; 3],
        bounds: Aabb<T>,
        values: Vec<T>,
    ) -> Result<Self> {
        let shape = GridShape::new(channels, resolution, bounds)?;
        if values.len() != shape.len() {
            return invalid(format!(
                "grid expects {} values, got {}",
                shape.len(),
                values.len()
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("grid values must be finite");
        }
        Ok(Self { shape, values })
    }

    pub fn shape(&self) -> &GridShape<T> {
        &self.shape
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn resolution(&self) -> [usize; 3] {
        self.shape.resolution
    }

    pub fn bounds(&self) -> &Aabb<T> {
        &self.shape.bounds
    }

    pub fn num_voxels(&self) -> usize {
        self.shape.num_voxels()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Mutable access for optimizers. Callers keep the values finite.
    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    #[inline]
    pub fn index(&self, c: usize, x: usize, y: usize, z: usize) -> usize {
        c * self.shape.num_voxels() + self.shape.spatial_index(x, y, z)
    }

    pub fn get(&self, c: usize, x: usize, y: usize, z: usize) -> T {
        self.values[self.index(c, x, y, z)]
    }

    pub fn set(&mut self, c: usize, x: usize, y: usize, z: usize, v: T) {
        let i = self.index(c, x, y, z);
        self.values[i] = v;
    }

    /// Interpolates every channel at the stencil into `out`.
    #[inline]
    pub fn sample_with(&self, st: &Stencil<T>, out: &mut [T]) {
        let n = self.shape.num_voxels();
        for (c, o) in out.iter_mut().enumerate().take(self.shape.channels) {
            let vals = &self.values[c * n..(c + 1) * n];
            let mut acc = T::zero();
            for k in 0..8 {
                acc += st.w[k] * vals[st.idx[k]];
            }
            *o = acc;
        }
    }

    pub fn sample(&self, p: Vec3<T>) -> Vec<T> {
        let mut out = vec![T::zero(); self.shape.channels];
        self.sample_with(&self.shape.stencil(p), &mut out);
        out
    }

    /// Resamples onto a finer lattice over the same bounds.
    pub fn upsample(&self, new_resolution: [usize; 3]) -> Result<Self> {
        let old = self.shape.resolution;
        if (0..3).any(|a| new_resolution[a] < old[a]) {
            return invalid(format!(
                "upsampling cannot shrink resolution {old:?} to {new_resolution:?}"
            ));
        }
        if new_resolution == old {
            return Ok(self.clone());
        }
        let shape = GridShape::new(self.shape.channels, new_resolution, self.shape.bounds)?;
        // Work in index space so lattice points that coincide with old
        // samples are hit exactly.
        let index_shape = GridShape {
            channels: self.shape.channels,
            resolution: old,
            bounds: Aabb {
                min: [T::zero(); 3],
                max: [
                    T::of((old[0] - 1) as f64),
                    T::of((old[1] - 1) as f64),
                    T::of((old[2] - 1) as f64),
                ],
            },
        };
        let ratio = |a: usize| (old[a] - 1) as f64 / (new_resolution[a] - 1) as f64;
        let (rx, ry, rz) = (ratio(0), ratio(1), ratio(2));
        let mut values = vec![T::zero(); shape.len()];
        let n_new = shape.num_voxels();
        let mut buf = vec![T::zero(); self.shape.channels];
        for x in 0..new_resolution[0] {
            for y in 0..new_resolution[1] {
                for z in 0..new_resolution[2] {
                    let p = [
                        T::of(x as f64 * rx),
                        T::of(y as f64 * ry),
                        T::of(z as f64 * rz),
                    ];
                    self.sample_with(&index_shape.stencil(p), &mut buf);
                    let s = shape.spatial_index(x, y, z);
                    for (c, v) in buf.iter().enumerate() {
                        values[c * n_new + s] = *v;
                    }
                }
            }
        }
        Ok(Self { shape, values })
    }

    pub fn cast<U: Real>(&self) -> VoxelGrid<U> {
        VoxelGrid {
            shape: GridShape {
                channels: self.shape.channels,
                resolution: self.shape.resolution,
                bounds: self.shape.bounds.cast(),
            },
            values: self.values.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}

/// Adds `upstream[c] * w_k` to every corner of the stencil in `grad`, which
/// has the grid's layout.
#[inline]
pub(crate) fn scatter<T: Real>(st: &Stencil<T>, upstream: &[T], num_voxels: usize, grad: &mut [T]) {
    for (c, &u) in upstream.iter().enumerate() {
        if u == T::zero() {
            continue;
        }
        let g = &mut grad[c * num_voxels..(c + 1) * num_voxels];
        for k in 0..8 {
            g[st.idx[k]] += st.w[k] * u;
        }
    }
}

/// Trilinear lookup of every point; one `C`-vector per point.
pub fn trilinear_sample<T: Real>(grid: &VoxelGrid<T>, points: &[Vec3<T>]) -> Result<Vec<Vec<T>>> {
    if grid.values.is_empty() {
        return invalid("cannot sample an empty grid");
    }
    points
        .iter()
        .map(|p| {
            if p.iter().any(|v| !v.is_finite()) {
                return invalid("sample points must be finite");
            }
            Ok(grid.sample(*p))
        })
        .collect()
}

/// Adjoint of [`trilinear_sample`]: scatters each upstream vector onto the
/// corner voxels with the forward weights. The result has the grid layout.
pub fn trilinear_adjoint<T: Real>(
    shape: &GridShape<T>,
    points: &[Vec3<T>],
    upstream: &[Vec<T>],
) -> Result<Vec<T>> {
    if points.len() != upstream.len() {
        return invalid(format!(
            "{} points but {} upstream vectors",
            points.len(),
            upstream.len()
        ));
    }
    if let Some(bad) = upstream.iter().find(|u| u.len() != shape.channels) {
        return invalid(format!(
            "upstream vector has {} channels, grid has {}",
            bad.len(),
            shape.channels
        ));
    }
    let n = shape.num_voxels();
    let mut grad = vec![T::zero(); shape.len()];
    for (p, u) in points.iter().zip(upstream) {
        scatter(&shape.stencil(*p), u, n, &mut grad);
    }
    Ok(grad)
}
