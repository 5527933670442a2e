//! Adam with bias correction and an optional spatial freeze mask, plus the
//! exponential learning-rate decay.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::num::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moments of one parameter vector. `step` counts calls to [`adam_step`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            step: 0,
        }
    }
}

/// One Adam update in place.
///
/// `trainable`, when given, is a spatial mask whose length divides the
/// parameter count; entry `i` is governed by `trainable[i % len]`, which
/// matches the channel-major grid layout. Masked entries keep both their value
/// and their moments.
pub fn adam_step<T: Real>(
    params: &mut [T],
    grads: &[T],
    state: &mut AdamState<T>,
    lr: T,
    trainable: Option<&[bool]>,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != state.v.len() {
        return invalid(format!(
            "adam shapes differ: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        ));
    }
    if let Some(mask) = trainable {
        if mask.is_empty() || params.len() % mask.len() != 0 {
            return invalid(format!(
                "mask of {} entries does not tile {} parameters",
                mask.len(),
                params.len()
            ));
        }
    }
    state.step += 1;
    let c = state.config;
    let (b1, b2, eps) = (T::of(c.beta1), T::of(c.beta2), T::of(c.eps));
    let one = T::one();
    let t = state.step.min(i32::MAX as u64) as i32;
    let bc1 = one - b1.powi(t);
    let bc2 = one - b2.powi(t);
    let update = |p: &mut T, g: T, m: &mut T, v: &mut T| {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let mh = *m / bc1;
        let vh = *v / bc2;
        *p -= lr * mh / (vh.sqrt() + eps);
    };
    let it = params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()));
    match trainable {
        None => it.for_each(|((p, g), (m, v))| update(p, *g, m, v)),
        Some(mask) => {
            let n = mask.len();
            it.enumerate()
                .filter(|(i, _)| mask[i % n])
                .for_each(|(_, ((p, g), (m, v)))| update(p, *g, m, v));
        }
    }
    Ok(())
}

/// `lr0 * gamma^(step / total)`; a zero-length stage keeps `lr0`.
pub fn lr_at(step: usize, total: usize, lr0: f64, gamma: f64) -> f64 {
    if total == 0 {
        return lr0;
    }
    lr0 * gamma.powf(step as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = vec![0.5f64, -1.0, 2.0];
        let mut s = AdamState::new(3, AdamConfig::default());
        adam_step(&mut p, &[0.0; 3], &mut s, 0.1, None).unwrap();
        assert_eq!(p, vec![0.5, -1.0, 2.0]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr_against_the_sign() {
        let mut p = vec![0.0f64, 0.0];
        let mut s = AdamState::new(2, AdamConfig::default());
        adam_step(&mut p, &[3.0, -0.02], &mut s, 0.1, None).unwrap();
        assert!((p[0] + 0.1).abs() < 1e-8);
        assert!((p[1] - 0.1).abs() < 1e-6);
    }

    #[test]
    fn quadratic_trajectory_matches_reference_trace() {
        // f(x) = (x - 3)^2 from x = 0 at lr 0.1, traced independently
        let expected = [
            0.09999999983333335,
            0.19989729258521102,
            0.29961847654925267,
            0.3990864689442145,
            0.4982205437727129,
            0.5969363926185332,
            0.6951462106969352,
            0.7927588106102016,
            0.8896797663766276,
            0.9858115903830454,
        ];
        let mut x = [0.0f64];
        let mut s = AdamState::new(1, AdamConfig::default());
        for e in expected {
            let g = 2.0 * (x[0] - 3.0);
            adam_step(&mut x, &[g], &mut s, 0.1, None).unwrap();
            assert!((x[0] - e).abs() <= 1e-12, "{} vs {e}", x[0]);
        }
    }

    #[test]
    fn masked_entries_are_untouched() {
        let mut p = vec![1.0f64; 8];
        let mut s = AdamState::new(8, AdamConfig::default());
        let mask = [true, false, false, true];
        for _ in 0..3 {
            adam_step(&mut p, &[0.5; 8], &mut s, 0.1, Some(&mask)).unwrap();
        }
        for i in 0..8 {
            if mask[i % 4] {
                assert!(p[i] < 1.0 && s.m[i] != 0.0);
            } else {
                assert_eq!((p[i], s.m[i], s.v[i]), (1.0, 0.0, 0.0));
            }
        }
    }

    #[test]
    fn shape_errors() {
        let mut s = AdamState::<f64>::new(2, AdamConfig::default());
        assert!(adam_step(&mut [0.0; 3], &[0.0; 3], &mut s, 0.1, None).is_err());
        let mut s = AdamState::<f64>::new(3, AdamConfig::default());
        assert!(adam_step(&mut [0.0; 3], &[0.0; 2], &mut s, 0.1, None).is_err());
        assert!(adam_step(&mut [0.0; 3], &[0.0; 3], &mut s, 0.1, Some(&[true, false])).is_err());
    }

    #[test]
    fn decay_schedule() {
        assert_eq!(lr_at(0, 100, 0.1, 0.1), 0.1);
        assert!((lr_at(100, 100, 0.1, 0.1) - 0.01).abs() < 1e-15);
        assert!((lr_at(50, 100, 0.1, 0.1) - 0.1 * 10f64.powf(-0.5)).abs() < 1e-12);
        assert_eq!(lr_at(0, 0, 0.3, 0.1), 0.3);
    }
}
