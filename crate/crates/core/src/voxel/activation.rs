use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::num::Real;

/// Shift `b` such that a zero raw density has per-step opacity `alpha_init`
/// over a step of length `s`: `b = log((1 - alpha_init)^(-1/s) - 1)`.
///
/// Evaluated as `log(expm1(-log1p(-alpha_init) / s))`, which is the same
/// expression without cancellation for tiny `alpha_init`.
pub fn compute_shift<T: Real>(alpha_init: T, s: T) -> Result<T> {
    if !(alpha_init > T::zero() && alpha_init < T::one()) {
        return invalid(format!("alpha_init must lie in (0, 1), got {alpha_init}"));
    }
    if !(s > T::zero()) || !s.is_finite() {
        return invalid(format!("voxel size must be positive, got {s}"));
    }
    let b = ((-(-alpha_init).ln_1p()) / s).exp_m1().ln();
    if !b.is_finite() {
        return invalid(format!(
            "shift for alpha_init={alpha_init}, s={s} is not representable"
        ));
    }
    Ok(b)
}

/// Shifted softplus `sigma = softplus(raw + b)`.
///
/// `voxel_size` is measured in the renderer's distance unit (one voxel of
/// the density grid), so the default `1.0` pins the per-voxel opacity of a
/// zero raw density to `alpha_init`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityActivation<T> {
    alpha_init: T,
    voxel_size: T,
    shift: T,
}

impl<T: Real> DensityActivation<T> {
    pub fn new(alpha_init: T, voxel_size: T) -> Result<Self> {
        let shift = compute_shift(alpha_init, voxel_size)?;
        Ok(Self {
            alpha_init,
            voxel_size,
            shift,
        })
    }

    /// Rebuilds an activation with a stored shift, e.g. from a checkpoint.
    pub fn from_parts(alpha_init: T, voxel_size: T, shift: T) -> Result<Self> {
        compute_shift(alpha_init, voxel_size)?;
        if !shift.is_finite() {
            return invalid("density shift must be finite");
        }
        Ok(Self {
            alpha_init,
            voxel_size,
            shift,
        })
    }

    pub fn alpha_init(&self) -> T {
        self.alpha_init
    }

    pub fn voxel_size(&self) -> T {
        self.voxel_size
    }

    pub fn shift(&self) -> T {
        self.shift
    }

    #[inline]
    pub fn activate(&self, raw: T) -> T {
        (raw + self.shift).softplus()
    }

    /// `d sigma / d raw`.
    #[inline]
    pub fn derivative(&self, raw: T) -> T {
        (raw + self.shift).sigmoid()
    }

    /// Raw value whose activation equals `sigma` (`sigma > 0`).
    pub fn inverse(&self, sigma: T) -> T {
        sigma.exp_m1().ln() - self.shift
    }

    pub fn cast<U: Real>(&self) -> DensityActivation<U> {
        DensityActivation {
            alpha_init: U::of(self.alpha_init.as_f64()),
            voxel_size: U::of(self.voxel_size.as_f64()),
            shift: U::of(self.shift.as_f64()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shift_examples() {
        assert_eq!(compute_shift(0.5f64, 1.0).unwrap(), 0.0);
        // Closed form evaluated at 50 digits: -13.122361877403453794...
        let b = compute_shift(1e-6f64, 0.5).unwrap();
        assert!((b - (-13.122361877403454)).abs() < 1e-12);
    }

    #[test]
    fn shift_domain_errors() {
        assert!(compute_shift(0.0f64, 1.0).is_err());
        assert!(compute_shift(1.0f64, 1.0).is_err());
        assert!(compute_shift(0.5f64, 0.0).is_err());
        assert!(compute_shift(0.5f64, -1.0).is_err());
        assert!(DensityActivation::new(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn zero_raw_gives_alpha_init_opacity() {
        for &a in &[1e-6f64, 1e-3, 0.5, 0.9] {
            for &s in &[0.25, 0.5, 1.0, 3.0] {
                let act = DensityActivation::new(a, s).unwrap();
                let opacity = -(-act.activate(0.0) * s).exp_m1();
                assert!((opacity - a).abs() <= 1e-12, "a={a} s={s} got {opacity}");
            }
        }
    }

    #[test]
    fn activation_limits() {
        let act = DensityActivation::new(0.5f64, 1.0).unwrap();
        assert_eq!(act.activate(-1e6), 0.0);
        assert!((act.activate(-act.shift()) - 2f64.ln()).abs() < 1e-15);
        // softplus(50) = 50 + log1p(e^-50) = 50 + 1.9e-22 at extended precision.
        assert!((act.activate(50.0) - 50.0).abs() <= 1e-12);
        assert!(act.activate(1e6).is_finite());
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let act = DensityActivation::new(1e-3f64, 1.0).unwrap();
        let h = 1e-5;
        let mut prev = f64::NEG_INFINITY;
        let mut raw = -40.0;
        while raw <= 40.0 {
            let fd = (act.activate(raw + h) - act.activate(raw - h)) / (2.0 * h);
            let an = act.derivative(raw);
            assert!((fd - an).abs() <= 1e-8 * an.abs().max(1e-300) + 1e-15, "raw={raw}");
            let v = act.activate(raw);
            assert!(v >= prev && v >= 0.0);
            prev = v;
            raw += 0.37;
        }
    }

    #[test]
    fn inverse_round_trips() {
        let act = DensityActivation::new(1e-6f64, 1.0).unwrap();
        for &s in &[1e-3, 0.5, 4.0, 30.0] {
            assert!((act.activate(act.inverse(s)) - s).abs() < 1e-12 * s.max(1.0));
        }
    }
}
