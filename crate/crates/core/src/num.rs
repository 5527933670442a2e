//! Scalar abstraction shared by every numeric module.
//!
//! All field math is written once against [`Real`]. Training normally runs in
//! `f32`; gradient verification and reference checks run in `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point scalar usable by grids, renderer, losses and optimizer.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`, used for constants and config values.
    fn of(x: f64) -> Self;

    fn as_f64(self) -> f64;

    fn as_f32(self) -> f32;

    /// Numerically stable `log(1 + exp(x))`.
    fn softplus(self) -> Self {
        let zero = Self::zero();
        if self > zero {
            self + (-self).exp().ln_1p()
        } else {
            self.exp().ln_1p()
        }
    }

    /// Logistic sigmoid, stable for large `|x|`.
    fn sigmoid(self) -> Self {
        let one = Self::one();
        if self >= Self::zero() {
            one / (one + (-self).exp())
        } else {
            let e = self.exp();
            e / (one + e)
        }
    }
}

macro_rules! impl_real {
    ($t:ty) => {
        impl Real for $t {
            #[inline]
            fn of(x: f64) -> Self {
                x as $t
            }

            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }

            #[inline]
            fn as_f32(self) -> f32 {
                self as f32
            }
        }
    };
}

impl_real!(f32);
impl_real!(f64);

/// Three-component vector helpers. Points and directions are plain arrays.
pub type Vec3<T> = [T; 3];

#[inline]
pub fn dot<T: Real>(a: Vec3<T>, b: Vec3<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross<T: Real>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm<T: Real>(a: Vec3<T>) -> T {
    dot(a, a).sqrt()
}

#[inline]
pub fn normalize<T: Real>(a: Vec3<T>) -> Vec3<T> {
    let n = norm(a);
    [a[0] / n, a[1] / n, a[2] / n]
}

#[inline]
pub fn sub<T: Real>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add<T: Real>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn scale<T: Real>(a: Vec3<T>, s: T) -> Vec3<T> {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn cast3<T: Real, U: Real>(a: Vec3<T>) -> Vec3<U> {
    [U::of(a[0].as_f64()), U::of(a[1].as_f64()), U::of(a[2].as_f64())]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_branches_agree_near_zero() {
        for &x in &[-1e-3f64, 0.0, 1e-3] {
            let direct = (1.0 + x.exp()).ln();
            assert!((x.softplus() - direct).abs() < 1e-15);
        }
        assert_eq!((-800.0f64).softplus(), 0.0);
        assert!(((800.0f64).softplus() - 800.0).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_is_finite_at_extremes() {
        assert_eq!((-1000.0f64).sigmoid(), 0.0);
        assert_eq!((1000.0f64).sigmoid(), 1.0);
        assert_eq!(0.0f32.sigmoid(), 0.5);
    }
}
