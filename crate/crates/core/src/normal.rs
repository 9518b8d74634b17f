//! Standard normal density, distribution and tail functions.
//!
//! Everything goes through the complementary error function so that upper
//! tails keep full relative precision far from the origin.

use libm::erfc;
use statrs::function::erf::erfc_inv;
use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

/// φ(x)
pub fn pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Φ(x)
pub fn cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// 1 − Φ(x), computed without cancellation.
pub fn sf(x: f64) -> f64 {
    0.5 * erfc(x * FRAC_1_SQRT_2)
}

/// Inverse of [`sf`]: the `x` with `1 − Φ(x) = p`, for `p` in (0, 1).
pub fn isf(p: f64) -> f64 {
    let mut x = SQRT_2 * erfc_inv(2.0 * p);
    // Newton steps: the starting point is only good to ~1e-10.
    for _ in 0..2 {
        let s = sf(x);
        if !(s > 0.0 && x.is_finite()) {
            break;
        }
        x += (s - p) / pdf(x);
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        assert!((cdf(0.0) - 0.5).abs() < 1e-16);
        assert!((pdf(0.0) - 0.398_942_280_401_432_7).abs() < 1e-15);
        // 1 − Φ(1.959963984540054) = 0.025
        assert!((sf(1.959_963_984_540_054) - 0.025).abs() < 1e-15);
        // far tail: 1 − Φ(10) = 7.619853024160527e-24
        let tail = sf(10.0);
        assert!((tail / 7.619_853_024_160_527e-24 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn isf_inverts_sf() {
        for &p in &[1e-12, 1e-7, 5e-5, 0.025, 0.3, 0.5, 0.9] {
            let x = isf(p);
            assert!((sf(x) / p - 1.0).abs() < 1e-13, "p={p} x={x}");
        }
    }
}
