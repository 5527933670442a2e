use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Trainable box that grows linearly from an initial fraction of the grid to
/// the whole grid over `max_steps` iterations. Voxels outside the box are
/// frozen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpandingBoxSchedule {
    p_min_init: [f64; 3],
    p_max_init: [f64; 3],
    max_steps: usize,
    resolution: [usize; 3],
}

impl ExpandingBoxSchedule {
    pub fn new(
        p_min_init: [f64; 3],
        p_max_init: [f64; 3],
        max_steps: usize,
        resolution: [usize; 3],
    ) -> Result<Self> {
        for a in 0..3 {
            let (lo, hi) = (p_min_init[a], p_max_init[a]);
            if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
                return invalid(format!(
                    "box fractions must satisfy 0 <= min <= max <= 1 (axis {a}: {lo}, {hi})"
                ));
            }
        }
        if max_steps == 0 {
            return invalid("expanding box needs max_steps >= 1");
        }
        if resolution.iter().any(|&n| n == 0) {
            return invalid("expanding box needs a nonempty resolution");
        }
        Ok(Self {
            p_min_init,
            p_max_init,
            max_steps,
            resolution,
        })
    }

    pub fn max_steps(&self) -> usize {
        self.max_steps
    }

    pub fn resolution(&self) -> [usize; 3] {
        self.resolution
    }

    /// `min(i / M, 1)`.
    pub fn ratio(&self, i: usize) -> f64 {
        (i as f64 / self.max_steps as f64).min(1.0)
    }

    /// Integer voxel corners `(P_min, P_max)` at iteration `i`, rounded half
    /// up. The trainable region is the half-open box `[P_min, P_max)`.
    pub fn box_corners(&self, i: usize) -> ([usize; 3], [usize; 3]) {
        if i >= self.max_steps {
            return ([0; 3], self.resolution);
        }
        let r = self.ratio(i);
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for a in 0..3 {
            let n = self.resolution[a] as f64;
            lo[a] = round_half_up(self.p_min_init[a] * (1.0 - r) * n);
            hi[a] = round_half_up((self.p_max_init[a] * (1.0 - r) + r) * n);
            hi[a] = hi[a].min(self.resolution[a]);
            lo[a] = lo[a].min(hi[a]);
        }
        (lo, hi)
    }

    pub fn is_trainable(&self, i: usize, x: usize, y: usize, z: usize) -> bool {
        let (lo, hi) = self.box_corners(i);
        (lo[0]..hi[0]).contains(&x) && (lo[1]..hi[1]).contains(&y) && (lo[2]..hi[2]).contains(&z)
    }

    /// Spatial mask in x, y, z row-major order; `true` marks trainable voxels.
    pub fn freeze_mask(&self, i: usize) -> Vec<bool> {
        let [nx, ny, nz] = self.resolution;
        let (lo, hi) = self.box_corners(i);
        let mut mask = vec![false; nx * ny * nz];
        for x in lo[0]..hi[0] {
            for y in lo[1]..hi[1] {
                let row = (x * ny + y) * nz;
                mask[row + lo[2]..row + hi[2]].iter_mut().for_each(|m| *m = true);
            }
        }
        mask
    }
}

/// Products like `0.2 * 100` land a hair off the integer; the epsilon keeps
/// exact halves and integers stable.
fn round_half_up(x: f64) -> usize {
    (x + 0.5 + 1e-9).floor().max(0.0) as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inward(n: usize) -> ExpandingBoxSchedule {
        ExpandingBoxSchedule::new([0.2; 3], [0.8; 3], 256, [n; 3]).unwrap()
    }

    #[test]
    fn corners_at_known_iterations() {
        let s = inward(100);
        assert_eq!(s.box_corners(0), ([20; 3], [80; 3]));
        assert_eq!(s.box_corners(128), ([10; 3], [90; 3]));
        assert_eq!(s.box_corners(256), ([0; 3], [100; 3]));
        assert_eq!(s.box_corners(10_000), ([0; 3], [100; 3]));
    }

    #[test]
    fn forward_facing_box_starts_as_far_slab() {
        let s = ExpandingBoxSchedule::new([0.0, 0.0, 0.995], [1.0; 3], 256, [64, 64, 64]).unwrap();
        let (lo, hi) = s.box_corners(0);
        assert_eq!(lo, [0, 0, 64]);
        assert_eq!(hi, [64, 64, 64]);
        let (lo, _) = s.box_corners(128);
        assert_eq!(lo[2], 32);
    }

    #[test]
    fn mask_counts_and_monotonicity() {
        let s = inward(100);
        assert_eq!(s.freeze_mask(0).iter().filter(|&&m| m).count(), 60 * 60 * 60);
        assert!(s.freeze_mask(256).iter().all(|&m| m));

        let s = ExpandingBoxSchedule::new([0.1, 0.3, 0.25], [0.7, 0.9, 0.5], 37, [13, 9, 11]).unwrap();
        let mut prev = s.freeze_mask(0);
        for i in 1..=80 {
            let cur = s.freeze_mask(i);
            assert!(prev.iter().zip(&cur).all(|(a, b)| !a || *b), "shrunk at {i}");
            prev = cur;
        }
        assert!(prev.iter().all(|&m| m));
    }

    #[test]
    fn rejects_bad_fractions() {
        assert!(ExpandingBoxSchedule::new([0.5; 3], [0.4; 3], 10, [4; 3]).is_err());
        assert!(ExpandingBoxSchedule::new([-0.1; 3], [0.4; 3], 10, [4; 3]).is_err());
        assert!(ExpandingBoxSchedule::new([0.1; 3], [0.4; 3], 0, [4; 3]).is_err());
    }
}
