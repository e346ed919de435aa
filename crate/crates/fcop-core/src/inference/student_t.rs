//! Standardized Student-t distribution (location 0, scale 1, ν d.o.f.),
//! with the CDF through the regularized incomplete beta function.

use crate::error::{Error, Result};
use crate::numerics::math::{exp, fabs, ln, ln_gamma, log1p, sqrt};
use crate::numerics::roots::invert_monotone_cdf_with_pdf;
use alloc::format;

/// log density of t_ν at x.
pub fn log_pdf(x: f64, nu: f64) -> f64 {
    ln_gamma((nu + 1.0) / 2.0)
        - ln_gamma(nu / 2.0)
        - 0.5 * ln(nu * core::f64::consts::PI)
        - (nu + 1.0) / 2.0 * log1p(x * x / nu)
}

pub fn pdf(x: f64, nu: f64) -> f64 {
    exp(log_pdf(x, nu))
}

/// CDF of t_ν: for x ≤ 0, P(T ≤ x) = I_{ν/(ν+x²)}(ν/2, 1/2)/2.
pub fn cdf(x: f64, nu: f64) -> f64 {
    if x == 0.0 {
        return 0.5;
    }
    let half = 0.5 * inc_beta(nu / (nu + x * x), nu / 2.0, 0.5);
    if x < 0.0 {
        half
    } else {
        1.0 - half
    }
}

/// Quantile of t_ν; bisection-safeguarded Newton on the CDF.
pub fn quantile(p: f64, nu: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("t quantile needs p in (0,1), got {p}")));
    }
    invert_monotone_cdf_with_pdf(|x| cdf(x, nu), |x| pdf(x, nu), p, (-10.0, 10.0), 1e-12)
}

/// Regularized incomplete beta I_x(a, b) via the Lentz continued fraction.
pub fn inc_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * ln(x) + b * log1p(-x);
    // The continued fraction converges fast for x < (a+1)/(a+b+2);
    // otherwise use the symmetry I_x(a,b) = 1 − I_{1−x}(b,a).
    if x < (a + 1.0) / (a + b + 2.0) {
        exp(ln_front) * beta_cf(x, a, b) / a
    } else {
        1.0 - exp(ln_front) * beta_cf(1.0 - x, b, a) / b
    }
}

fn beta_cf(x: f64, a: f64, b: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if fabs(d) < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m_f = m as f64;
        let m2 = 2.0 * m_f;
        let aa = m_f * (b - m_f) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if fabs(d) < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if fabs(c) < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m_f) * (qab + m_f) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if fabs(d) < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if fabs(c) < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if fabs(del - 1.0) < EPS {
            break;
        }
    }
    h
}

/// Scale factor between the t's natural scale and unit standard deviation:
/// a t_ν variable has standard deviation √(ν/(ν−2)) for ν > 2.
pub fn sd_scale(nu: f64) -> Result<f64> {
    if !(nu > 2.0) {
        return Err(Error::InvalidParameter(format!("t sd needs nu > 2, got {nu}")));
    }
    Ok(sqrt(nu / (nu - 2.0)))
}
