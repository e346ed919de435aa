//! Adaptive one-dimensional quadrature over finite and infinite intervals.
//!
//! A 15-point Gauss–Kronrod rule is applied per subinterval and the worst
//! subinterval is bisected until the summed error estimate meets the
//! tolerance. Infinite ranges are mapped to finite ones first: the doubly
//! infinite line through `x = t/(1−t²)` on `(−1,1)`, half-lines through
//! `x = a + t/(1−t)` on `(0,1)`. All nodes are interior, so integrable
//! endpoint singularities are never evaluated directly.
//!
//! Subdivision order is a pure function of the integrand values, so repeated
//! evaluation with the same configuration is deterministic — likelihoods
//! built on this quadrature can be finite-differenced without node jitter.

use crate::error::{Error, Result};
use crate::numerics::math::fabs;
use alloc::format;
use alloc::vec::Vec;

/// Tolerances and budget for adaptive quadrature.
#[derive(Debug, Clone, Copy)]
pub struct QuadratureConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self { abs_tol: 1e-10, rel_tol: 1e-8, max_subdivisions: 200 }
    }
}

impl QuadratureConfig {
    pub fn new(abs_tol: f64, rel_tol: f64, max_subdivisions: usize) -> Result<Self> {
        if !(abs_tol > 0.0) || !(rel_tol > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "quadrature tolerances must be positive (abs {abs_tol}, rel {rel_tol})"
            )));
        }
        if max_subdivisions < 1 {
            return Err(Error::InvalidParameter(
                "max_subdivisions must be at least 1".into(),
            ));
        }
        Ok(Self { abs_tol, rel_tol, max_subdivisions })
    }

    /// Tighter tolerances for oracle-grade integrals.
    pub fn strict() -> Self {
        Self { abs_tol: 1e-12, rel_tol: 1e-11, max_subdivisions: 400 }
    }
}

/// Integration range; infinite ends are mapped to a finite parameter domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Support {
    Finite(f64, f64),
    /// `[a, ∞)`
    UpperHalfLine(f64),
    /// `(−∞, b]`
    LowerHalfLine(f64),
    RealLine,
}

// 15-point Kronrod extension of 7-point Gauss (QUADPACK dqk15 constants).
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_225,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_69,
    0.279_705_391_489_276_67,
    0.381_830_050_505_118_94,
    0.417_959_183_673_469_4,
];

#[derive(Clone, Copy)]
struct Segment {
    lo: f64,
    hi: f64,
    value: f64,
    error: f64,
}

/// Apply the 15-point rule on `[lo, hi]`; returns (value, error estimate).
fn kronrod_15<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64) -> (f64, f64) {
    let center = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);

    let fc = f(center);
    let mut resk = WGK[7] * fc;
    let mut resg = WG[3] * fc;
    let mut resabs = WGK[7] * fabs(fc);
    let mut fv = [0.0f64; 15];
    fv[7] = fc;

    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        fv[j] = f1;
        fv[14 - j] = f2;
        resk += WGK[j] * (f1 + f2);
        resabs += WGK[j] * (fabs(f1) + fabs(f2));
        if j % 2 == 1 {
            resg += WG[j / 2] * (f1 + f2);
        }
    }

    let mean = 0.5 * resk;
    let mut resasc = WGK[7] * fabs(fc - mean);
    for j in 0..7 {
        resasc += WGK[j] * (fabs(fv[j] - mean) + fabs(fv[14 - j] - mean));
    }

    let value = resk * half;
    let resasc = resasc * fabs(half);
    let mut err = fabs((resk - resg) * half);
    if resasc != 0.0 && err != 0.0 {
        let scale = libm::pow(200.0 * err / resasc, 1.5);
        err = if scale < 1.0 { resasc * scale } else { resasc };
    }
    let _ = resabs;
    (value, err)
}

/// Adaptive integral of `f` over `support`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, support: Support, cfg: &QuadratureConfig) -> Result<f64> {
    match support {
        Support::Finite(a, b) => {
            if !(a.is_finite() && b.is_finite()) {
                return Err(Error::Domain("finite support with non-finite ends".into()));
            }
            if a == b {
                return Ok(0.0);
            }
            if a > b {
                return adaptive(&|x| -f(x), b, a, cfg);
            }
            adaptive(&f, a, b, cfg)
        }
        Support::UpperHalfLine(a) => {
            let g = move |t: f64| {
                let u = 1.0 - t;
                f(a + t / u) / (u * u)
            };
            adaptive(&g, 0.0, 1.0, cfg)
        }
        Support::LowerHalfLine(b) => {
            let g = move |t: f64| {
                let u = 1.0 - t;
                f(b - t / u) / (u * u)
            };
            adaptive(&g, 0.0, 1.0, cfg)
        }
        Support::RealLine => {
            let g = move |t: f64| {
                let u = 1.0 - t * t;
                f(t / u) * (1.0 + t * t) / (u * u)
            };
            adaptive(&g, -1.0, 1.0, cfg)
        }
    }
}

fn adaptive<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64, cfg: &QuadratureConfig) -> Result<f64> {
    let (value, error) = kronrod_15(f, lo, hi);
    let mut segments = Vec::with_capacity(32);
    segments.push(Segment { lo, hi, value, error });

    loop {
        let mut total = 0.0;
        let mut total_err = 0.0;
        for s in &segments {
            total += s.value;
            total_err += s.error;
        }
        let target = if cfg.abs_tol > cfg.rel_tol * fabs(total) {
            cfg.abs_tol
        } else {
            cfg.rel_tol * fabs(total)
        };
        if total_err <= target {
            return Ok(total);
        }
        if segments.len() >= cfg.max_subdivisions {
            return Err(Error::QuadratureNonConvergence { estimate: total, error_bound: total_err });
        }

        // Bisect the segment with the largest error estimate.
        let mut worst = 0;
        for (i, s) in segments.iter().enumerate() {
            if s.error > segments[worst].error {
                worst = i;
            }
        }
        let seg = segments[worst];
        let mid = 0.5 * (seg.lo + seg.hi);
        if mid <= seg.lo || mid >= seg.hi {
            // Interval at floating-point resolution; cannot refine further.
            return Err(Error::QuadratureNonConvergence { estimate: total, error_bound: total_err });
        }
        let (lv, le) = kronrod_15(f, seg.lo, mid);
        let (rv, re) = kronrod_15(f, mid, seg.hi);
        segments[worst] = Segment { lo: seg.lo, hi: mid, value: lv, error: le };
        segments.push(Segment { lo: mid, hi: seg.hi, value: rv, error: re });
    }
}
