//! Scalar abstraction shared by every numeric module.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use rand::Rng;

/// Floating point scalar: `f32` or `f64`.
///
/// Infinities are meaningful values here (log-weights of impossible
/// occupations are `-inf`, the `psi(-1)` sentinel is `+inf`); NaN never is.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Uniform draw on `[0, 1)`.
    fn unit<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Lossy conversion from an `f64` literal.
    fn of(x: f64) -> Self;

    fn of_usize(n: usize) -> Self {
        Self::of(n as f64)
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {
    #[inline]
    fn unit<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.random::<f32>()
    }

    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
}

impl Real for f64 {
    #[inline]
    fn unit<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.random::<f64>()
    }

    #[inline]
    fn of(x: f64) -> Self {
        x
    }
}

/// `[a]^+`, with `[-inf]^+ = 0` and `[+inf]^+ = +inf`.
#[inline]
pub fn positive_part<T: Real>(a: T) -> T {
    if a > T::zero() {
        a
    } else {
        T::zero()
    }
}

/// Kahan-compensated sum.
pub fn kahan_sum<T: Real, I: IntoIterator<Item = T>>(values: I) -> T {
    let mut sum = T::zero();
    let mut carry = T::zero();
    for v in values {
        let y = v - carry;
        let t = sum + y;
        carry = (t - sum) - y;
        sum = t;
    }
    sum
}

/// `ln(sum(exp(x)))` over the finite entries, `-inf` when there are none.
pub fn log_sum_exp<T: Real>(values: &[T]) -> T {
    let max = values
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return max;
    }
    let s = kahan_sum(values.iter().map(|&v| (v - max).exp()));
    max + s.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn positive_part_of_infinities() {
        assert_eq!(positive_part(f64::NEG_INFINITY), 0.0);
        assert_eq!(positive_part(f64::INFINITY), f64::INFINITY);
        assert_eq!((-positive_part(f64::INFINITY)).exp(), 0.0);
        assert_eq!(positive_part(-0.5f32), 0.0);
    }

    #[test]
    fn log_sum_exp_ignores_neg_inf() {
        let v = [0.0f64, f64::NEG_INFINITY, 0.0];
        assert!((log_sum_exp(&v) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
        // no overflow for large magnitudes
        let big = [-5000.0f64, -5000.0];
        assert!((log_sum_exp(&big) - (-5000.0 + 2f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn kahan_recovers_small_terms() {
        let mut v = vec![1.0f64];
        v.extend(std::iter::repeat_n(1e-16, 10_000));
        assert!((kahan_sum(v) - (1.0 + 1e-12)).abs() < 1e-15);
    }
}
