//! Standard normal density and distribution function.

use std::f64::consts::FRAC_1_SQRT_2;

/// `1 / √(2π)`
pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density `φ(z)`.
#[inline]
pub fn normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * libm::exp(-0.5 * z * z)
}

/// Standard normal distribution function `Φ(z)`.
///
/// Evaluated as `erfc(−z/√2)/2`, which keeps full relative accuracy in the
/// lower tail and avoids `1 − small` cancellation in the upper one. Accepts
/// `±∞`.
#[inline]
pub fn normal_cdf(z: f64) -> f64 {
    if z == f64::INFINITY {
        return 1.0;
    }
    if z == f64::NEG_INFINITY {
        return 0.0;
    }
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

/// `∫_{−∞}^{z} Φ(s) ds = z Φ(z) + φ(z)`.
#[inline]
pub fn integrated_normal_cdf(z: f64) -> f64 {
    if z == f64::NEG_INFINITY {
        return 0.0;
    }
    (z * normal_cdf(z) + normal_pdf(z)).max(0.0)
}
