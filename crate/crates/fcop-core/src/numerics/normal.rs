//! Univariate standard normal functions.
//!
//! The CDF is computed through `erfc`, which keeps full relative accuracy
//! deep into the lower tail; the far-tail ratios used by the tail-dependence
//! analytics depend on that. The quantile uses Acklam's rational
//! approximation polished by two Newton steps against the `erfc`-based CDF.

use crate::error::{Error, Result};
use crate::numerics::math::{erfc, exp, ln, log1p, sqrt};
use alloc::format;

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_68;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;
const FRAC_1_SQRT_2: f64 = core::f64::consts::FRAC_1_SQRT_2;

/// Density φ(x).
#[inline]
pub fn pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * exp(-0.5 * x * x)
}

/// log φ(x).
#[inline]
pub fn log_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

/// Distribution function Φ(x); saturates to 0/1 in the extreme tails.
#[inline]
pub fn cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Survival function Φ(−x) with full relative accuracy for large x.
#[inline]
pub fn survival(x: f64) -> f64 {
    0.5 * erfc(x * FRAC_1_SQRT_2)
}

/// log Φ(x), accurate for arbitrarily negative x.
///
/// `erfc` underflows near x ≈ −37.5; below that an asymptotic expansion of
/// the Mills ratio takes over.
pub fn log_cdf(x: f64) -> f64 {
    if x > -37.0 {
        let c = cdf(x);
        if c > 1e-300 {
            return ln(c);
        }
    }
    // Φ(x) = φ(x)/(−x) · (1 − 1/x² + 3/x⁴ − 15/x⁶ + 105/x⁸ − ...)
    let inv2 = 1.0 / (x * x);
    let series = 1.0 + inv2 * (-1.0 + inv2 * (3.0 + inv2 * (-15.0 + inv2 * 105.0)));
    log_pdf(x) - ln(-x) + log1p(series - 1.0)
}

/// Mills-type ratio φ(x)/Φ(x), stable for very negative x (≈ −x there).
#[inline]
pub fn pdf_over_cdf(x: f64) -> f64 {
    exp(log_pdf(x) - log_cdf(x))
}

/// Quantile Φ⁻¹(p) for p in (0,1).
pub fn quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("normal quantile needs p in (0,1), got {p}")));
    }
    let mut x = acklam(p);
    // Two Newton polish steps push |Φ(x) − p| to the rounding floor. The
    // residual Φ(x) − p is formed on whichever side avoids cancellation.
    for _ in 0..2 {
        let d = pdf(x);
        if d < 1e-300 {
            break;
        }
        let err = if x <= 0.0 { cdf(x) - p } else { (1.0 - p) - survival(x) };
        x -= err / d;
    }
    Ok(x)
}

/// Acklam's rational approximation to Φ⁻¹ (relative error ≈ 1e-9).
fn acklam(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;

    if p < P_LOW {
        let q = sqrt(-2.0 * ln(p));
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -acklam_tail(1.0 - p)
    }
}

fn acklam_tail(p: f64) -> f64 {
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    let q = sqrt(-2.0 * ln(p));
    (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
        / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
}
