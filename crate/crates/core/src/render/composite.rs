//! Point sampling along rays and emission-absorption compositing.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::num::{Real, Vec3};
use crate::voxel::Aabb;

use super::camera::Ray;

/// What the depth channel accumulates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DepthMode {
    /// `sum_i w_i t_i`.
    #[default]
    Expected,
    /// `sum_i w_i`, i.e. accumulated opacity without the distance factor.
    Opacity,
}

/// Samples along one ray clipped to a box.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SamplePoints<T> {
    pub t: Vec<T>,
    pub positions: Vec<Vec3<T>>,
    pub delta: Vec<T>,
}

/// Start and count of the uniform samples of `ray` inside `bounds`: sample
/// `k` sits at `t_start + (k + 1/2) step`.
#[inline]
pub(crate) fn sample_span<T: Real>(ray: &Ray<T>, bounds: &Aabb<T>, step: T) -> Option<(T, usize)> {
    let (t0, t1) = bounds.intersect_ray(ray.origin, ray.dir)?;
    let t0 = t0.max(ray.near);
    let t1 = t1.min(ray.far);
    if !(t1 > t0) {
        return None;
    }
    let n = ((t1 - t0) / step - T::of(0.5)).ceil();
    if !(n > T::zero()) {
        return None;
    }
    Some((t0, n.to_usize().unwrap_or(0)))
}

#[inline]
pub(crate) fn clamp_to<T: Real>(p: Vec3<T>, b: &Aabb<T>) -> Vec3<T> {
    [
        p[0].max(b.min[0]).min(b.max[0]),
        p[1].max(b.min[1]).min(b.max[1]),
        p[2].max(b.min[2]).min(b.max[2]),
    ]
}

/// Uniform samples with spacing `step` over the part of the ray inside
/// `bounds` and `[near, far]`. Every `delta` equals `step`; a miss yields no
/// samples.
pub fn sample_points<T: Real>(ray: &Ray<T>, bounds: &Aabb<T>, step: T) -> Result<SamplePoints<T>> {
    if !(step > T::zero()) {
        return invalid(format!("sample step must be positive, got {step}"));
    }
    let Some((start, n)) = sample_span(ray, bounds, step) else {
        return Ok(SamplePoints::default());
    };
    let half = T::of(0.5);
    let mut out = SamplePoints {
        t: Vec::with_capacity(n),
        positions: Vec::with_capacity(n),
        delta: vec![step; n],
    };
    for k in 0..n {
        let t = start + (T::of(k as f64) + half) * step;
        out.t.push(t);
        out.positions.push(clamp_to(ray.at(t), bounds));
    }
    Ok(out)
}

/// Composited result for one ray.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput<T> {
    pub color: [T; 3],
    pub depth: T,
    /// `T_i * (1 - exp(-sigma_i delta_i))` per sample.
    pub weights: Vec<T>,
    pub final_transmittance: T,
}

/// Per-ray accumulation without allocation. `weights` and `trans` receive
/// `w_i` and `T_{i+1}` (transmittance after sample `i`).
#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) fn composite_core<T: Real>(
    sigma: &[T],
    color: &[[T; 3]],
    delta: &[T],
    t: &[T],
    background: [T; 3],
    depth_mode: DepthMode,
    weights: &mut Vec<T>,
    trans: &mut Vec<T>,
) -> ([T; 3], T, T) {
    weights.clear();
    trans.clear();
    let mut optical = T::zero();
    let mut t_before = T::one();
    let mut rgb = [T::zero(); 3];
    let mut depth = T::zero();
    for i in 0..sigma.len() {
        let tau = sigma[i] * delta[i];
        optical += tau;
        let t_after = (-optical).exp();
        let w = t_before * -(-tau).exp_m1();
        for ch in 0..3 {
            rgb[ch] += w * color[i][ch];
        }
        depth += match depth_mode {
            DepthMode::Expected => w * t[i],
            DepthMode::Opacity => w,
        };
        weights.push(w);
        trans.push(t_after);
        t_before = t_after;
    }
    for ch in 0..3 {
        rgb[ch] += t_before * background[ch];
    }
    (rgb, depth, t_before)
}

/// Reverse-mode derivative of [`composite_core`] with respect to `sigma`
/// and `color`, given upstream gradients on the ray color and depth.
///
/// With `v_i = g_c . c_i + g_d . depth_value_i` and suffix sums
/// `S_i = sum_{k>i} w_k v_k + T_final g_c . bg`, the density derivative is
/// `delta_i (T_{i+1} v_i - S_i)`.
#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) fn composite_backward<T: Real>(
    color: &[[T; 3]],
    delta: &[T],
    t: &[T],
    background: [T; 3],
    depth_mode: DepthMode,
    weights: &[T],
    trans: &[T],
    final_t: T,
    g_color: [T; 3],
    g_depth: T,
    d_sigma: &mut Vec<T>,
    d_color: &mut Vec<[T; 3]>,
) {
    let n = weights.len();
    d_sigma.clear();
    d_sigma.resize(n, T::zero());
    d_color.clear();
    d_color.resize(n, [T::zero(); 3]);
    let dot = |a: [T; 3], b: [T; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let mut suffix = final_t * dot(g_color, background);
    for i in (0..n).rev() {
        let depth_value = match depth_mode {
            DepthMode::Expected => t[i],
            DepthMode::Opacity => T::one(),
        };
        let v = dot(g_color, color[i]) + g_depth * depth_value;
        d_sigma[i] = delta[i] * (trans[i] * v - suffix);
        let w = weights[i];
        d_color[i] = [w * g_color[0], w * g_color[1], w * g_color[2]];
        suffix += w * v;
    }
}

/// Quadrature `C = sum_i T_i (1 - exp(-sigma_i delta_i)) c_i + T_final bg`
/// with `T_i = exp(-sum_{j<i} sigma_j delta_j)`, plus the matching depth.
/// A fully transparent ray has depth 0.
pub fn composite<T: Real>(
    sigma: &[T],
    color: &[[T; 3]],
    delta: &[T],
    background: [T; 3],
    t: &[T],
    depth_mode: DepthMode,
) -> Result<RenderOutput<T>> {
    let n = sigma.len();
    if color.len() != n || delta.len() != n || t.len() != n {
        return invalid(format!(
            "composite inputs differ in length: sigma {n}, color {}, delta {}, t {}",
            color.len(),
            delta.len(),
            t.len()
        ));
    }
    if let Some(s) = sigma.iter().find(|s| !(**s >= T::zero())) {
        return invalid(format!("density must be nonnegative, got {s}"));
    }
    if let Some(d) = delta.iter().find(|d| !(**d > T::zero())) {
        return invalid(format!("sample spacing must be positive, got {d}"));
    }
    let mut weights = Vec::with_capacity(n);
    let mut trans = Vec::with_capacity(n);
    let (rgb, depth, final_t) =
        composite_core(sigma, color, delta, t, background, depth_mode, &mut weights, &mut trans);
    Ok(RenderOutput {
        color: rgb,
        depth,
        weights,
        final_transmittance: final_t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transparent_ray_shows_background() {
        let out = composite(
            &[0.0f64; 5],
            &[[0.2, 0.3, 0.4]; 5],
            &[0.1; 5],
            [1.0, 0.5, 0.0],
            &[0.1, 0.2, 0.3, 0.4, 0.5],
            DepthMode::Expected,
        )
        .unwrap();
        assert_eq!(out.color, [1.0, 0.5, 0.0]);
        assert_eq!(out.depth, 0.0);
        assert_eq!(out.final_transmittance, 1.0);
    }

    #[test]
    fn opaque_sample_shows_its_color() {
        let out = composite(
            &[300.0f64],
            &[[0.2, 0.7, 0.9]],
            &[0.1],
            [1.0; 3],
            &[2.0],
            DepthMode::Expected,
        )
        .unwrap();
        for ch in 0..3 {
            assert!((out.color[ch] - [0.2, 0.7, 0.9][ch]).abs() < 1e-9);
        }
        assert!((out.weights[0] - 1.0).abs() < 1e-12);
        assert!((out.depth - 2.0).abs() < 1e-9);
    }

    #[test]
    fn homogeneous_medium_matches_analytic_transmittance() {
        let n = 64;
        let step = 1.0 / n as f64;
        let c = [0.9, 0.2, 0.4];
        let bg = [0.1, 0.1, 1.0];
        let t: Vec<f64> = (0..n).map(|k| (k as f64 + 0.5) * step).collect();
        let out = composite(&vec![2.0; n], &vec![c; n], &vec![step; n], bg, &t, DepthMode::Expected).unwrap();
        let e = (-2.0f64).exp();
        for ch in 0..3 {
            assert!((out.color[ch] - (c[ch] * (1.0 - e) + bg[ch] * e)).abs() < 1e-3);
        }
        let total: f64 = out.weights.iter().sum::<f64>() + out.final_transmittance;
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_invalid_inputs() {
        let c = [[0.0f64; 3]; 2];
        assert!(composite(&[1.0, -1.0], &c, &[0.1, 0.1], [0.0; 3], &[0.0, 0.1], DepthMode::Expected).is_err());
        assert!(composite(&[1.0, 1.0], &c, &[0.1, 0.0], [0.0; 3], &[0.0, 0.1], DepthMode::Expected).is_err());
        assert!(composite(&[1.0], &c, &[0.1], [0.0; 3], &[0.0], DepthMode::Expected).is_err());
    }

    #[test]
    fn single_sample_density_derivative_closed_form() {
        let (sigma, delta) = (1.7f64, 0.3);
        let c = [0.6, 0.1, 0.8];
        let bg = [0.2, 0.9, 0.5];
        let out = composite(&[sigma], &[c], &[delta], bg, &[1.0], DepthMode::Expected).unwrap();
        let trans = vec![out.final_transmittance];
        let mut ds = Vec::new();
        let mut dc = Vec::new();
        for ch in 0..3 {
            let mut g = [0.0; 3];
            g[ch] = 1.0;
            composite_backward(
                &[c], &[delta], &[1.0], bg, DepthMode::Expected, &out.weights, &trans,
                out.final_transmittance, g, 0.0, &mut ds, &mut dc,
            );
            let expect = delta * (-sigma * delta).exp() * (c[ch] - bg[ch]);
            assert!((ds[0] - expect).abs() < 1e-10);
        }
    }

    #[test]
    fn sampling_cases() {
        let b = Aabb::new([0.0f64; 3], [1.0; 3]).unwrap();
        let miss = Ray { origin: [2.0, 2.0, -1.0], dir: [0.0, 0.0, 1.0], near: 0.0, far: 10.0 };
        assert!(sample_points(&miss, &b, 0.25).unwrap().t.is_empty());
        let hit = Ray { origin: [0.5, 0.5, -1.0], dir: [0.0, 0.0, 1.0], near: 0.0, far: 10.0 };
        let s = sample_points(&hit, &b, 0.25).unwrap();
        assert_eq!(s.t, vec![1.125, 1.375, 1.625, 1.875]);
        assert_eq!(s.delta, vec![0.25; 4]);
        assert!(sample_points(&hit, &b, 0.0).is_err());
        // near/far clip
        let clipped = Ray { far: 1.5, ..hit };
        assert_eq!(sample_points(&clipped, &b, 0.25).unwrap().t.len(), 2);
    }
}
