//! Monotone-CDF inversion.
//!
//! Both entry points solve `F(x) = p` for a nondecreasing continuous `F`.
//! The bracket is expanded geometrically (up to 60 doublings) if it does not
//! already straddle `p`, then a bisection-safeguarded update — secant, or
//! Newton when a derivative is supplied — homes in on the root.

use crate::error::{Error, Result};
use crate::numerics::math::fabs;
use alloc::format;

const MAX_EXPANSIONS: usize = 60;
const MAX_ITERATIONS: usize = 200;

/// Invert `F` at `p` to `|F(x) − p| ≤ tol` starting from `bracket`.
pub fn invert_monotone_cdf<F>(f: F, p: f64, bracket: (f64, f64), tol: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    invert_impl(&f, None::<&fn(f64) -> f64>, p, bracket, tol)
}

/// Same as [`invert_monotone_cdf`] but with Newton steps from the density.
pub fn invert_monotone_cdf_with_pdf<F, D>(
    f: F,
    df: D,
    p: f64,
    bracket: (f64, f64),
    tol: f64,
) -> Result<f64>
where
    F: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    invert_impl(&f, Some(&df), p, bracket, tol)
}

fn invert_impl<F, D>(f: &F, df: Option<&D>, p: f64, bracket: (f64, f64), tol: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    if !p.is_finite() {
        return Err(Error::NonFinite(format!("target probability {p}")));
    }
    let (mut lo, mut hi) = bracket;
    if !(lo < hi) {
        return Err(Error::Domain(format!("invalid bracket [{lo}, {hi}]")));
    }

    let mut flo = f(lo);
    let mut fhi = f(hi);
    let mut width = hi - lo;

    let mut expansions = 0;
    while flo > p {
        if expansions >= MAX_EXPANSIONS {
            return Err(Error::BracketFailure(format!(
                "F({lo}) = {flo} still above target {p} after {MAX_EXPANSIONS} doublings"
            )));
        }
        lo -= width;
        width *= 2.0;
        flo = f(lo);
        expansions += 1;
    }
    let mut expansions = 0;
    while fhi < p {
        if expansions >= MAX_EXPANSIONS {
            return Err(Error::BracketFailure(format!(
                "F({hi}) = {fhi} still below target {p} after {MAX_EXPANSIONS} doublings"
            )));
        }
        hi += width;
        width *= 2.0;
        fhi = f(hi);
        expansions += 1;
    }

    if fabs(flo - p) <= tol {
        return Ok(lo);
    }
    if fabs(fhi - p) <= tol {
        return Ok(hi);
    }

    let mut x = 0.5 * (lo + hi);
    for iter in 0..MAX_ITERATIONS {
        let fx = f(x);
        if fabs(fx - p) <= tol {
            return Ok(x);
        }
        if fx < p {
            lo = x;
            flo = fx;
        } else {
            hi = x;
            fhi = fx;
        }

        // Candidate step: Newton if a positive derivative is available,
        // otherwise secant on the current bracket. Every other iteration
        // bisects instead — plain false position can stagnate with one
        // endpoint stuck when the CDF is strongly convex across the bracket.
        let mut cand = f64::NAN;
        if iter % 2 == 0 {
            if let Some(d) = df {
                let slope = d(x);
                if slope > 0.0 && slope.is_finite() {
                    cand = x - (fx - p) / slope;
                }
            }
            if !cand.is_finite() || cand <= lo || cand >= hi {
                let denom = fhi - flo;
                cand = if denom > 0.0 { lo + (p - flo) / denom * (hi - lo) } else { f64::NAN };
            }
        }
        if !cand.is_finite() || cand <= lo || cand >= hi {
            cand = 0.5 * (lo + hi);
        }
        if cand == x || hi - lo < f64::EPSILON * (fabs(lo) + fabs(hi) + 1.0) {
            // Interval exhausted at floating-point resolution.
            return Ok(cand);
        }
        x = cand;
    }
    Ok(x)
}
