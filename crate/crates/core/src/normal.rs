//! Standard normal distribution function.

use std::f64::consts::FRAC_1_SQRT_2;

/// `Phi(x)`, computed as `erfc(-x / sqrt 2) / 2` so both tails keep full
/// relative precision.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

pub fn std_normal_pdf(x: f64) -> f64 {
    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}
