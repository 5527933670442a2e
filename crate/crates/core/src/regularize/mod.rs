//! Loss terms of the training objective, each with its analytic gradient:
//! photometric MSE, voxel total variation, color-aware total variation, their
//! weighted combination, and depth smoothness on rendered patches.

mod smooth;

pub use smooth::{
    catv_loss, cavs_loss, color_awareness, neighbor_delta, tv_loss, CavsTerms, Penalty,
};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::num::Real;

/// Nonnegative weights of the regularizers for one training stage.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub tv_feature: f64,
    pub tv_density: f64,
    pub catv: f64,
    pub ds: f64,
}

impl LossWeights {
    pub const ZERO: Self = Self {
        tv_feature: 0.0,
        tv_density: 0.0,
        catv: 0.0,
        ds: 0.0,
    };

    pub fn inward_coarse() -> Self {
        Self {
            tv_feature: 5e-5,
            tv_density: 5e-4,
            catv: 5e-5,
            ds: 5e-4,
        }
    }

    pub fn inward_fine() -> Self {
        Self {
            tv_feature: 1e-5,
            tv_density: 5e-5,
            catv: 5e-6,
            ds: 1e-5,
        }
    }

    pub fn forward_facing() -> Self {
        Self {
            tv_feature: 5e-6,
            tv_density: 5e-5,
            catv: 5e-6,
            ds: 5e-4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.tv_feature, self.tv_density, self.catv, self.ds];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return invalid(format!("loss weights must be finite and nonnegative: {self:?}"));
        }
        Ok(())
    }

    pub fn has_cavs(&self) -> bool {
        self.tv_feature > 0.0 || self.tv_density > 0.0 || self.catv > 0.0
    }
}

/// Mean over rays of the squared color error, and its gradient
/// `2 (rendered - target) / |R|` per ray.
pub fn photometric_loss<T: Real>(
    rendered: &[[T; 3]],
    target: &[[T; 3]],
) -> Result<(T, Vec<[T; 3]>)> {
    if rendered.is_empty() {
        return invalid("photometric loss needs at least one ray");
    }
    if rendered.len() != target.len() {
        return invalid(format!(
            "{} rendered colors but {} targets",
            rendered.len(),
            target.len()
        ));
    }
    let inv = T::one() / T::of(rendered.len() as f64);
    let two = T::of(2.0);
    let mut loss = T::zero();
    let grad = rendered
        .iter()
        .zip(target)
        .map(|(r, t)| {
            let d = [r[0] - t[0], r[1] - t[1], r[2] - t[2]];
            loss += d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
            d.map(|v| two * v * inv)
        })
        .collect();
    Ok((loss * inv, grad))
}

/// `(lambda / |R|) sum_patches sum_(x,y) |grad D|^2` with forward
/// differences inside each `size x size` row-major patch. Returns the loss and
/// its gradient per patch pixel.
pub fn ds_loss<T: Real>(patches: &[Vec<T>], size: usize, lambda: T) -> Result<(T, Vec<Vec<T>>)> {
    if size < 2 {
        return invalid(format!("depth patches need side >= 2, got {size}"));
    }
    if patches.is_empty() {
        return invalid("depth smoothness needs at least one patch");
    }
    if let Some(p) = patches.iter().find(|p| p.len() != size * size) {
        return invalid(format!(
            "depth patch has {} values, expected {}",
            p.len(),
            size * size
        ));
    }
    let scale = lambda / T::of(patches.len() as f64);
    let two = T::of(2.0);
    let mut loss = T::zero();
    let mut grads = Vec::with_capacity(patches.len());
    for d in patches {
        let mut g = vec![T::zero(); size * size];
        for y in 0..size {
            for x in 0..size {
                let i = y * size + x;
                if x + 1 < size {
                    let diff = d[i + 1] - d[i];
                    loss += diff * diff;
                    g[i + 1] += two * diff * scale;
                    g[i] -= two * diff * scale;
                }
                if y + 1 < size {
                    let diff = d[i + size] - d[i];
                    loss += diff * diff;
                    g[i + size] += two * diff * scale;
                    g[i] -= two * diff * scale;
                }
            }
        }
        grads.push(g);
    }
    Ok((loss * scale, grads))
}

/// Weights are already folded into each component.
pub fn total_loss<T: Real>(photometric: T, cavs: T, ds: T) -> T {
    photometric + cavs + ds
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn photometric_cases() {
        let a = vec![[0.2f64, 0.4, 0.6]; 5];
        assert_eq!(photometric_loss(&a, &a).unwrap().0, 0.0);
        let b: Vec<[f64; 3]> = a.iter().map(|c| c.map(|v| v + 0.1)).collect();
        assert!((photometric_loss(&a, &b).unwrap().0 - 0.03).abs() < 1e-15);
        assert!(photometric_loss::<f64>(&[], &[]).is_err());
        assert!(photometric_loss(&a, &b[..2]).is_err());
    }

    #[test]
    fn photometric_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r: Vec<[f64; 3]> = (0..10).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let t: Vec<[f64; 3]> = (0..10).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let (_, g) = photometric_loss(&r, &t).unwrap();
        let h = 1e-4;
        for i in 0..10 {
            for c in 0..3 {
                let mut p = r.clone();
                p[i][c] += h;
                let mut m = r.clone();
                m[i][c] -= h;
                let fd = (photometric_loss(&p, &t).unwrap().0 - photometric_loss(&m, &t).unwrap().0) / (2.0 * h);
                assert!((fd - g[i][c]).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn ds_cases() {
        assert_eq!(ds_loss(&[vec![3.0f64; 16]], 4, 1.0).unwrap().0, 0.0);
        let (l, _) = ds_loss(&[vec![0.0f64, 1.0, 0.0, 1.0]], 2, 1.0).unwrap();
        assert_eq!(l, 2.0);
        assert!(ds_loss(&[vec![0.0f64]], 1, 1.0).is_err());
        assert!(ds_loss(&[vec![0.0f64; 3]], 2, 1.0).is_err());
        // |R| normalization and lambda scaling
        let two = vec![vec![0.0f64, 1.0, 0.0, 1.0], vec![0.0; 4]];
        assert_eq!(ds_loss(&two, 2, 0.5).unwrap().0, 0.5);
    }

    #[test]
    fn ds_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let patches: Vec<Vec<f64>> = (0..3).map(|_| (0..64).map(|_| rng.gen_range(0.0..4.0)).collect()).collect();
        let (_, g) = ds_loss(&patches, 8, 0.3).unwrap();
        let h = 1e-4;
        for p in 0..3 {
            for i in 0..64 {
                let mut a = patches.clone();
                a[p][i] += h;
                let mut b = patches.clone();
                b[p][i] -= h;
                let fd = (ds_loss(&a, 8, 0.3).unwrap().0 - ds_loss(&b, 8, 0.3).unwrap().0) / (2.0 * h);
                let denom = fd.abs().max(g[p][i].abs()).max(1e-12);
                assert!((fd - g[p][i]).abs() / denom <= 1e-8, "{fd} vs {}", g[p][i]);
            }
        }
    }

    #[test]
    fn total_is_component_sum() {
        assert_eq!(total_loss(0.0f64, 0.0, 0.0), 0.0);
        assert_eq!(total_loss(0.25f64, 0.125, 0.5), 0.875);
    }

    #[test]
    fn weights_validation() {
        assert!(LossWeights::inward_coarse().validate().is_ok());
        let bad = LossWeights { ds: -1.0, ..LossWeights::ZERO };
        assert!(bad.validate().is_err());
    }
}
