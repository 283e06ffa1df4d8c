//! Scalar abstraction shared by every numerical kernel.
//!
//! All core math is written against [`Real`], so the same code runs in
//! `f32`, `f64` or quad precision ([`f128::f128`]). Quad precision is what
//! makes the high-order moment extraction well posed.

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Real scalar usable by the numerical kernels.
pub trait Real:
    Float + FloatConst + FromPrimitive + ToPrimitive + Debug + Display + Send + Sync + 'static
{
}

impl<T> Real for T where
    T: Float + FloatConst + FromPrimitive + ToPrimitive + Debug + Display + Send + Sync + 'static
{
}

/// Converts an `f64` literal into `T`.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("f64 literal representable in scalar type")
}

/// Converts an integer into `T`.
#[inline]
pub fn int<T: Real>(n: i64) -> T {
    T::from_i64(n).expect("integer representable in scalar type")
}

/// Lossy conversion to `f64` for reporting.
#[inline]
pub fn to_f64<T: Real>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// `n!` as a scalar.
pub fn factorial<T: Real>(n: usize) -> T {
    (1..=n).fold(T::one(), |acc, i| acc * int::<T>(i as i64))
}

/// Γ(x) for positive integer or half-integer arguments `x = m/2`.
pub fn gamma_half<T: Real>(twice_x: usize) -> T {
    assert!(twice_x > 0, "gamma_half needs a positive argument");
    if twice_x % 2 == 0 {
        factorial(twice_x / 2 - 1)
    } else {
        // Γ(1/2) = √π, Γ(x + 1) = x Γ(x)
        let mut g = T::PI().sqrt();
        let mut half = 1;
        while half < twice_x {
            g = g * int::<T>(half as i64) / int::<T>(2);
            half += 2;
        }
        g
    }
}

/// Volume of the unit ball in ℝⁿ.
pub fn unit_ball_volume<T: Real>(n: usize) -> T {
    T::PI().powf(int::<T>(n as i64) / int::<T>(2)) / gamma_half::<T>(n + 2)
}

/// Area of the unit sphere `S^{n-1}` in ℝⁿ (2 for n = 1).
pub fn unit_sphere_area<T: Real>(n: usize) -> T {
    int::<T>(n as i64) * unit_ball_volume::<T>(n)
}

/// Relative difference `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_diff<T: Real>(a: T, b: T, floor: T) -> T {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ball_and_sphere_constants() {
        assert!((unit_ball_volume::<f64>(1) - 2.0).abs() < 1e-15);
        assert!((unit_ball_volume::<f64>(3) - 4.0 * std::f64::consts::PI / 3.0).abs() < 1e-14);
        assert!((unit_sphere_area::<f64>(3) - 4.0 * std::f64::consts::PI).abs() < 1e-14);
        assert!((gamma_half::<f64>(5) - 0.75 * std::f64::consts::PI.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn quad_precision_literals() {
        let third = lit::<f128::f128>(1.0) / lit::<f128::f128>(3.0);
        let back = third * lit::<f128::f128>(3.0) - lit::<f128::f128>(1.0);
        assert!(to_f64(back).abs() < 1e-32);
    }
}
