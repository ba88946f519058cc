//! Standard-normal CDF and quantile function.
//!
//! The quantile is a piecewise rational approximation (central branch plus
//! two tail branches) followed by one Halley refinement step against the
//! erf-based CDF. The refinement brings the absolute error from the
//! approximation's ~1.15e-9 down to machine precision, with no data-dependent
//! iteration: cost is constant regardless of `p`.

use crate::error::{Error, Result};
use crate::Real;

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const SQRT_2PI: f64 = 2.506628274631000502415765284811;

/// Standard-normal CDF, evaluated via the complementary error function so the
/// lower tail keeps full relative precision.
pub fn normal_cdf(x: Real) -> Real {
    (0.5 * libm::erfc(-(x as f64) / SQRT_2)) as Real
}

/// Standard-normal density.
pub fn normal_pdf(x: Real) -> Real {
    let x = x as f64;
    ((-0.5 * x * x).exp() / SQRT_2PI) as Real
}

/// Standard-normal quantile `Q(p)` (inverse CDF).
///
/// Absolute error is below 1e-9 across `p in [1e-12, 1 - 1e-12]`; in practice
/// the refined value is accurate to machine precision.
pub fn gaussian_quantile(p: Real) -> Result<Real> {
    let p = p as f64;
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain {
            op: "gaussian_quantile",
            value: p,
        });
    }

    let x = rational_approx(p);

    // One Halley step on f(x) = Phi(x) - p. With g = f / pdf the update is
    // x - g / (1 + x*g/2), which is exact enough to saturate f64.
    let err = 0.5 * libm::erfc(-x / SQRT_2) - p;
    let g = err * SQRT_2PI * (0.5 * x * x).exp();
    Ok((x - g / (1.0 + 0.5 * x * g)) as Real)
}

// Acklam's rational approximation: |error| < 1.15e-9 over (0, 1).
fn rational_approx(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.38357751867269e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}
