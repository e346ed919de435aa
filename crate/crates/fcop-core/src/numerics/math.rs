//! Scalar math shim.
//!
//! `f64` inherent methods like `exp` live in `std`, so a `no_std` crate
//! routes transcendentals through `libm`. Going through one module keeps
//! results bit-identical whether the crate is linked against `std` or not.

pub use libm::{atan, cos, cosh, erf, erfc, exp, expm1, fabs, log1p, pow, sin, sinh, tanh};

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

/// Integer power by binary exponentiation.
pub fn powi(x: f64, n: i32) -> f64 {
    let mut base = if n < 0 { 1.0 / x } else { x };
    let mut e = n.unsigned_abs();
    let mut acc = 1.0;
    while e > 0 {
        if e & 1 == 1 {
            acc *= base;
        }
        base *= base;
        e >>= 1;
    }
    acc
}

/// Natural log of the gamma function, Lanczos approximation (g = 7, n = 9).
///
/// Accurate to about 1e-13 relative for x > 0; reflection handles x < 0.
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

    if x < 0.5 {
        // Reflection: Γ(x)Γ(1−x) = π / sin(πx)
        let pi = core::f64::consts::PI;
        ln(pi / fabs(sin(pi * x))) - ln_gamma(1.0 - x)
    } else {
        let z = x - 1.0;
        let mut sum = COEF[0];
        for (i, c) in COEF.iter().enumerate().skip(1) {
            sum += c / (z + i as f64);
        }
        let t = z + 7.5;
        LN_SQRT_2PI + (z + 0.5) * ln(t) - t + ln(sum)
    }
}

/// log(exp(a) + exp(b)) without overflow.
#[inline]
pub fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + log1p(exp(lo - hi))
}

/// Running compensated (Neumaier) sum; deterministic for a fixed order.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if fabs(self.sum) >= fabs(value) {
            self.comp += (self.sum - t) + value;
        } else {
            self.comp += (value - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}
