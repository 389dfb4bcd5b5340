//! Standard normal helpers shared by the generator, the smoothers and the oracle.

use libm::erfc;
use statrs::function::erf::erfc_inv;
use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

/// 1 / sqrt(2 pi)
pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
#[inline]
pub fn pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal CDF, accurate in both tails.
#[inline]
pub fn cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail `1 - cdf(x)` without cancellation.
#[inline]
pub fn sf(x: f64) -> f64 {
    0.5 * erfc(x * FRAC_1_SQRT_2)
}

/// Standard normal quantile. Returns the infinities at 0 and 1.
pub fn quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let z = -SQRT_2 * erfc_inv(2.0 * p);
    // one Newton step against the more accurate cdf
    let dens = pdf(z);
    if dens > 0.0 {
        let resid = if p < 0.5 { cdf(z) - p } else { (1.0 - p) - sf(z) };
        z - resid / dens
    } else {
        z
    }
}

/// Unnormalised Gaussian kernel `exp(-u^2 / 2)`. The normalising constant
/// cancels in every ratio estimator in this crate.
#[inline]
pub fn kernel(u: f64) -> f64 {
    (-0.5 * u * u).exp()
}

/// Moments `E[U^k | U < c]` (or `U >= c` when `upper` is true) of a truncated
/// standard normal for `k = 0..=4`.
pub fn truncated_moments(c: f64, upper: bool) -> [f64; 5] {
    // m_k = (k-1) m_{k-2} -/+ c^{k-1} phi(c) / mass
    let phi = pdf(c);
    let (mass, sign) = if upper { (sf(c), 1.0) } else { (cdf(c), -1.0) };
    let lambda = phi / mass;
    let mut m = [0.0; 5];
    m[0] = 1.0;
    m[1] = sign * lambda;
    for k in 2..5 {
        m[k] = (k as f64 - 1.0) * m[k - 2] + sign * c.powi(k as i32 - 1) * lambda;
    }
    m
}
