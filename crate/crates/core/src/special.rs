//! Standard normal helpers.
//!
//! `libm::erfc` (a port of the musl implementation) supplies the CDF with
//! full double precision in both tails; the quantile starts from the
//! `statrs` inverse error function and is polished by Newton steps.

use statrs::function::erf::erfc_inv;

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Natural log of the standard normal density.
pub fn norm_ln_pdf(x: f64) -> f64 {
    -0.5 * x * x + FRAC_1_SQRT_2PI.ln()
}

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    if x == f64::INFINITY {
        return 1.0;
    }
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile.
pub fn norm_inv_cdf(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    if p > 0.5 {
        return -norm_inv_cdf(1.0 - p);
    }
    let mut x = -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p);
    for _ in 0..2 {
        let d = norm_pdf(x);
        if d <= 0.0 || !x.is_finite() {
            break;
        }
        x -= (norm_cdf(x) - p) / d;
    }
    x
}
