//! Monotone cubic (PCHIP) interpolation.
//!
//! Fritsch–Carlson slope limiting keeps the interpolant monotone wherever the
//! data are monotone, which is what makes spline-cached CDFs safe to invert.

use crate::error::{Error, Result};
use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone)]
pub struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl Pchip {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let n = x.len();
        if n < 2 || y.len() != n {
            return Err(Error::DimensionMismatch("pchip needs >= 2 matching nodes".into()));
        }
        for w in x.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::InvalidParameter("pchip abscissae must increase".into()));
            }
        }

        let mut h = vec![0.0; n - 1];
        let mut delta = vec![0.0; n - 1];
        for i in 0..n - 1 {
            h[i] = x[i + 1] - x[i];
            delta[i] = (y[i + 1] - y[i]) / h[i];
        }

        let mut d = vec![0.0; n];
        if n == 2 {
            d[0] = delta[0];
            d[1] = delta[0];
        } else {
            for i in 1..n - 1 {
                if delta[i - 1] * delta[i] <= 0.0 {
                    d[i] = 0.0;
                } else {
                    // Weighted harmonic mean of neighbor slopes.
                    let w1 = 2.0 * h[i] + h[i - 1];
                    let w2 = h[i] + 2.0 * h[i - 1];
                    d[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
                }
            }
            d[0] = edge_slope(h[0], h[1], delta[0], delta[1]);
            d[n - 1] = edge_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        }
        Ok(Self { x, y, d })
    }

    #[inline]
    pub fn lo(&self) -> f64 {
        self.x[0]
    }

    #[inline]
    pub fn hi(&self) -> f64 {
        *self.x.last().unwrap()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.x
    }

    pub fn values(&self) -> &[f64] {
        &self.y
    }

    fn segment(&self, x: f64) -> usize {
        // Rightmost i with x[i] <= x, clamped to a valid segment index.
        match self.x.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(i) => i.min(self.x.len() - 2),
            Err(0) => 0,
            Err(i) => (i - 1).min(self.x.len() - 2),
        }
    }

    /// Interpolated value; linear continuation outside the node range.
    pub fn eval(&self, xq: f64) -> f64 {
        let i = self.segment(xq);
        let h = self.x[i + 1] - self.x[i];
        let t = (xq - self.x[i]) / h;
        let (h00, h10, h01, h11) = hermite_basis(t);
        h00 * self.y[i] + h10 * h * self.d[i] + h01 * self.y[i + 1] + h11 * h * self.d[i + 1]
    }

    /// Derivative of the interpolant.
    pub fn eval_derivative(&self, xq: f64) -> f64 {
        let i = self.segment(xq);
        let h = self.x[i + 1] - self.x[i];
        let t = (xq - self.x[i]) / h;
        let dh00 = (6.0 * t - 6.0) * t;
        let dh10 = (3.0 * t - 4.0) * t + 1.0;
        let dh01 = (6.0 - 6.0 * t) * t;
        let dh11 = (3.0 * t - 2.0) * t;
        dh00 * self.y[i] / h + dh10 * self.d[i] + dh01 * self.y[i + 1] / h + dh11 * self.d[i + 1]
    }
}

/// Natural cubic spline (C², no shape limiting).
///
/// Fourth-order accurate on smooth data including near extrema, where the
/// monotone [`Pchip`] drops to second order; used for cached densities.
/// May overshoot near kinks, so density evaluations clamp at zero.
#[derive(Debug, Clone)]
pub struct CubicSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    /// Second derivatives at the nodes.
    m: Vec<f64>,
}

impl CubicSpline {
    pub fn natural(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let n = x.len();
        if n < 3 || y.len() != n {
            return Err(Error::DimensionMismatch("cubic spline needs >= 3 matching nodes".into()));
        }
        for w in x.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::InvalidParameter("spline abscissae must increase".into()));
            }
        }
        // Thomas solve of the tridiagonal system for second derivatives,
        // natural end conditions m[0] = m[n-1] = 0.
        let mut m = vec![0.0; n];
        let mut c_prime = vec![0.0; n];
        let mut d_prime = vec![0.0; n];
        for i in 1..n - 1 {
            let h0 = x[i] - x[i - 1];
            let h1 = x[i + 1] - x[i];
            let a = h0 / 6.0;
            let b = (h0 + h1) / 3.0;
            let c = h1 / 6.0;
            let rhs = (y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0;
            let denom = b - a * c_prime[i - 1];
            c_prime[i] = c / denom;
            d_prime[i] = (rhs - a * d_prime[i - 1]) / denom;
        }
        for i in (1..n - 1).rev() {
            m[i] = d_prime[i] - c_prime[i] * m[i + 1];
        }
        Ok(Self { x, y, m })
    }

    fn segment(&self, xq: f64) -> usize {
        match self.x.binary_search_by(|v| v.partial_cmp(&xq).unwrap()) {
            Ok(i) => i.min(self.x.len() - 2),
            Err(0) => 0,
            Err(i) => (i - 1).min(self.x.len() - 2),
        }
    }

    #[inline]
    pub fn lo(&self) -> f64 {
        self.x[0]
    }

    #[inline]
    pub fn hi(&self) -> f64 {
        *self.x.last().unwrap()
    }

    pub fn eval(&self, xq: f64) -> f64 {
        let i = self.segment(xq);
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - xq) / h;
        let b = (xq - self.x[i]) / h;
        a * self.y[i]
            + b * self.y[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }
}

fn edge_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    // One-sided three-point estimate, limited to preserve shape.
    let d = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if d * d0 <= 0.0 {
        0.0
    } else if d0 * d1 <= 0.0 && libm::fabs(d) > 3.0 * libm::fabs(d0) {
        3.0 * d0
    } else {
        d
    }
}

#[inline]
fn hermite_basis(t: f64) -> (f64, f64, f64, f64) {
    let t2 = t * t;
    let t3 = t2 * t;
    (
        2.0 * t3 - 3.0 * t2 + 1.0,
        t3 - 2.0 * t2 + t,
        -2.0 * t3 + 3.0 * t2,
        t3 - t2,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use crate::numerics::normal;

    #[test]
    fn reproduces_nodes() {
        let x: Vec<f64> = (0..20).map(|i| i as f64 * 0.3).collect();
        let y: Vec<f64> = x.iter().map(|v| v * v).collect();
        let s = Pchip::new(x.clone(), y.clone()).unwrap();
        for (xi, yi) in x.iter().zip(&y) {
            assert_abs_diff_eq!(s.eval(*xi), *yi, epsilon = 1e-12);
        }
    }

    #[test]
    fn monotone_data_gives_monotone_interpolant() {
        let x: Vec<f64> = (0..200).map(|i| -5.0 + 0.05 * i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| normal::cdf(*v)).collect();
        let s = Pchip::new(x, y).unwrap();
        let mut prev = -1.0;
        for i in 0..2000 {
            let v = s.eval(-5.0 + 0.004975 * i as f64);
            assert!(v >= prev - 1e-15);
            prev = v;
        }
    }

    #[test]
    fn accurate_on_smooth_cdf() {
        let x: Vec<f64> = (0..=400).map(|i| -8.0 + 0.04 * i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| normal::cdf(*v)).collect();
        let s = Pchip::new(x, y).unwrap();
        for i in 0..=100 {
            let q = -6.0 + 0.12 * i as f64;
            assert_abs_diff_eq!(s.eval(q), normal::cdf(q), epsilon = 5e-7);
            assert_abs_diff_eq!(s.eval_derivative(q), normal::pdf(q), epsilon = 5e-4);
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let x: Vec<f64> = (0..60).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = x.iter().map(|v| libm::sin(*v)).collect();
        let s = Pchip::new(x, y).unwrap();
        for i in 0..50 {
            let q = 0.05 + 0.1 * i as f64;
            let h = 1e-6;
            let fd = (s.eval(q + h) - s.eval(q - h)) / (2.0 * h);
            assert_relative_eq!(s.eval_derivative(q), fd, max_relative = 1e-4, epsilon = 1e-7);
        }
    }
}
