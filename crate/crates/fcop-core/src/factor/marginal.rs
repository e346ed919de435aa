//! Univariate marginal of W₁ = Z₁ + V₀ with Z₁ standard normal.
//!
//! Closed forms:
//! - degenerate factor: Φ(w);
//! - exponential factor: F(w) = Φ(w) − e^{θ²/2−θw}Φ(w−θ);
//! - exponential difference: F(w) = Φ(w) − c₁ e^{θ₁²/2−θ₁w}Φ(w−θ₁)
//!   + c₂ e^{θ₂²/2+θ₂w}Φ(−w−θ₂), with c₁ = θ₂/(θ₁+θ₂), c₂ = θ₁/(θ₁+θ₂).
//!
//! One-sided Pareto/Weibull marginals are a single quadrature against the
//! closed component density; general differences are spline-cached over a
//! tailored grid with exact quadrature beyond it.

use super::{tailored_grid, FactorDist, OneSidedFactor};
use crate::error::{Error, Result};
use crate::numerics::interp::{CubicSpline, Pchip};
use crate::numerics::math::{exp, ln, log_sum_exp, sqrt};
use crate::numerics::normal;
use crate::numerics::quad::{integrate, QuadratureConfig, Support};
use crate::numerics::roots::invert_monotone_cdf_with_pdf;
use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

const QUAD_CFG: QuadratureConfig =
    QuadratureConfig { abs_tol: 1e-160, rel_tol: 1e-11, max_subdivisions: 300 };

enum MarginalKind {
    Gaussian,
    ExpOneSided { theta: f64 },
    ExpDifference { theta1: f64, theta2: f64 },
    /// Also covers the mirrored form V₀ = −V₂: the factor object already
    /// carries the reflection.
    QuadOneSided,
    Spline { cdf: Pchip, pdf: CubicSpline },
}

/// Distribution function, density and quantile of W₁.
pub struct MarginalW {
    kind: MarginalKind,
    factor: Arc<FactorDist>,
}

impl MarginalW {
    pub fn new(factor: Arc<FactorDist>) -> Result<Self> {
        use super::FactorKind as K;
        let kind = match &factor.kind {
            K::Degenerate => MarginalKind::Gaussian,
            K::OneSided(OneSidedFactor::Exponential { theta }) => {
                MarginalKind::ExpOneSided { theta: *theta }
            }
            K::ExpDifference { theta1, theta2 } => {
                MarginalKind::ExpDifference { theta1: *theta1, theta2: *theta2 }
            }
            K::OneSided(_) | K::Mirrored(_) => MarginalKind::QuadOneSided,
            K::NumericDifference(_) => build_spline(&factor)?,
        };
        Ok(Self { kind, factor })
    }

    pub fn factor(&self) -> &Arc<FactorDist> {
        &self.factor
    }

    /// F₁(w) = P(W₁ ≤ w).
    pub fn cdf(&self, w: f64) -> f64 {
        match &self.kind {
            MarginalKind::Gaussian => normal::cdf(w),
            // Stable for all w: the cancellation ratio F/Φ(w) decays only
            // like θ/(θ+|w|) in the lower tail, costing about one digit.
            MarginalKind::ExpOneSided { theta } => {
                (normal::cdf(w) - exp_phi(theta * theta / 2.0 - theta * w, w - theta))
                    .clamp(0.0, 1.0)
            }
            MarginalKind::ExpDifference { theta1, theta2 } => {
                let c1 = theta2 / (theta1 + theta2);
                let c2 = theta1 / (theta1 + theta2);
                let a = exp_phi(theta1 * theta1 / 2.0 - theta1 * w, w - theta1);
                let b = exp_phi(theta2 * theta2 / 2.0 + theta2 * w, -w - theta2);
                (normal::cdf(w) - c1 * a + c2 * b).clamp(0.0, 1.0)
            }
            MarginalKind::QuadOneSided => hybrid_cdf(&self.factor, w),
            MarginalKind::Spline { cdf, .. } => {
                if w < cdf.lo() || w > cdf.hi() {
                    hybrid_cdf(&self.factor, w)
                } else {
                    cdf.eval(w).clamp(0.0, 1.0)
                }
            }
        }
    }

    /// 1 − F₁(w), formed so the upper tail keeps relative accuracy.
    pub fn survival(&self, w: f64) -> f64 {
        match &self.kind {
            MarginalKind::Gaussian => normal::survival(w),
            MarginalKind::ExpOneSided { theta } => {
                (normal::survival(w) + exp_phi(theta * theta / 2.0 - theta * w, w - theta))
                    .clamp(0.0, 1.0)
            }
            MarginalKind::ExpDifference { theta1, theta2 } => {
                let c1 = theta2 / (theta1 + theta2);
                let c2 = theta1 / (theta1 + theta2);
                let a = exp_phi(theta1 * theta1 / 2.0 - theta1 * w, w - theta1);
                let b = exp_phi(theta2 * theta2 / 2.0 + theta2 * w, -w - theta2);
                (normal::survival(w) + c1 * a - c2 * b).clamp(0.0, 1.0)
            }
            _ => {
                let c = self.cdf(w);
                if c <= 0.999 {
                    return 1.0 - c;
                }
                quad_survival(&self.factor, w)
            }
        }
    }

    /// Density f₁(w) = dF₁/dw.
    pub fn pdf(&self, w: f64) -> f64 {
        match &self.kind {
            MarginalKind::Gaussian => normal::pdf(w),
            MarginalKind::ExpOneSided { .. } | MarginalKind::ExpDifference { .. } => {
                exp(self.log_pdf(w))
            }
            MarginalKind::QuadOneSided => quad_pdf(&self.factor, w),
            MarginalKind::Spline { pdf, .. } => {
                if w < pdf.lo() || w > pdf.hi() {
                    quad_pdf(&self.factor, w)
                } else {
                    pdf.eval(w).max(0.0)
                }
            }
        }
    }

    /// log f₁(w); exact in log space for the closed-form families.
    pub fn log_pdf(&self, w: f64) -> f64 {
        match &self.kind {
            MarginalKind::Gaussian => normal::log_pdf(w),
            MarginalKind::ExpOneSided { theta } => {
                ln(*theta) + theta * theta / 2.0 - theta * w + normal::log_cdf(w - theta)
            }
            MarginalKind::ExpDifference { theta1, theta2 } => {
                let k = theta1 * theta2 / (theta1 + theta2);
                let la = theta1 * theta1 / 2.0 - theta1 * w + normal::log_cdf(w - theta1);
                let lb = theta2 * theta2 / 2.0 + theta2 * w + normal::log_cdf(-w - theta2);
                ln(k) + log_sum_exp(la, lb)
            }
            _ => ln(self.pdf(w)),
        }
    }

    /// (F₁)⁻¹(p): safeguarded Newton with |F(q) − p| ≤ 1e-10.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Domain(format!("marginal quantile needs p in (0,1), got {p}")));
        }
        if let MarginalKind::Gaussian = self.kind {
            return normal::quantile(p);
        }
        let bracket = self.quantile_bracket(p)?;
        invert_monotone_cdf_with_pdf(|w| self.cdf(w), |w| self.pdf(w), p, bracket, 1e-10)
    }

    /// A bracket guaranteed to straddle the p-quantile: since
    /// W = Z + V₀, P(W ≤ a+b) ≤ P(Z ≤ a) + P(V₀ ≤ b) and symmetrically for
    /// the upper side, so component quantiles at p/2 bound the mixture.
    fn quantile_bracket(&self, p: f64) -> Result<(f64, f64)> {
        let half_lo = (0.5 * p).max(1e-300);
        let half_hi = (0.5 * (1.0 - p)).max(1e-300);
        let lo = normal::quantile(half_lo)? + self.factor_quantile_or_edge(half_lo);
        let hi = normal::quantile(1.0 - half_hi)? + self.factor_quantile_or_edge(1.0 - half_hi);
        Ok((lo, hi))
    }

    fn factor_quantile_or_edge(&self, p: f64) -> f64 {
        self.factor.quantile(p).unwrap_or(0.0)
    }

    /// First two moments of W₁ (mean of Z is 0, variance 1); errors if the
    /// factor variance does not exist.
    pub fn mean_and_sd(&self) -> Result<(f64, f64)> {
        let m = self.factor.mean()?;
        let v = self.factor.variance()?;
        Ok((m, sqrt(1.0 + v)))
    }
}

impl core::fmt::Debug for MarginalW {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("MarginalW").field("factor", &self.factor.spec()).finish()
    }
}

/// e^a · Φ(b), evaluated in log space.
#[inline]
fn exp_phi(a: f64, b: f64) -> f64 {
    exp(a + normal::log_cdf(b))
}

/// The Gaussian kernel localizes every marginal integral to |w − v| ≤ 9.5
/// (truncation below 3e-21): the window edges pick up the factor CDF and
/// survival directly, so heavy factor tails never have to be swept.
const KERNEL_HALF_WIDTH: f64 = 9.5;

/// Panel edges inside the kernel window around w: window bounds, cached
/// factor quantile edges, density kinks and the kernel center.
fn window_panels(factor: &FactorDist, w: f64) -> Vec<f64> {
    let lo = w - KERNEL_HALF_WIDTH;
    let hi = w + KERNEL_HALF_WIDTH;
    let mut edges = Vec::with_capacity(20);
    edges.push(lo);
    edges.push(hi);
    for &e in factor.panel_edges() {
        if e > lo && e < hi {
            edges.push(e);
        }
    }
    if w > lo && w < hi {
        edges.push(w);
    }
    edges.sort_by(|a, b| a.partial_cmp(b).unwrap());
    edges.dedup();
    edges
}

fn integrate_panels<F: Fn(f64) -> f64>(f: F, edges: &[f64]) -> f64 {
    let mut acc = 0.0;
    for pair in edges.windows(2) {
        if pair[1] > pair[0] {
            acc += integrate(&f, Support::Finite(pair[0], pair[1]), &QUAD_CFG)
                .unwrap_or_else(estimate_of);
        }
    }
    acc
}

/// ∫ Φ(w − v) dF_V(v): for v below the window Φ(w−v) ≈ 1, so that region
/// contributes the factor CDF at the window edge.
fn quad_cdf(factor: &FactorDist, w: f64) -> f64 {
    let edges = window_panels(factor, w);
    let inside = integrate_panels(|v| normal::cdf(w - v) * factor.pdf(v), &edges);
    (inside + factor.cdf(w - KERNEL_HALF_WIDTH)).clamp(0.0, 1.0)
}

/// CDF with the far upper tail taken from the survival side: integrating
/// the density forward inherits its ~1e-8 normalization error, which would
/// plateau the CDF strictly below 1 and break quantiles near 1.
fn hybrid_cdf(factor: &FactorDist, w: f64) -> f64 {
    let c = quad_cdf(factor, w);
    if c <= 0.99 {
        c
    } else {
        1.0 - quad_survival(factor, w)
    }
}

fn quad_survival(factor: &FactorDist, w: f64) -> f64 {
    let edges = window_panels(factor, w);
    let inside = integrate_panels(|v| normal::survival(w - v) * factor.pdf(v), &edges);
    // Factor mass above the window survives almost surely.
    (inside + factor.survival(w + KERNEL_HALF_WIDTH)).clamp(0.0, 1.0)
}

fn quad_pdf(factor: &FactorDist, w: f64) -> f64 {
    let edges = window_panels(factor, w);
    integrate_panels(|v| normal::pdf(w - v) * factor.pdf(v), &edges).max(0.0)
}

fn estimate_of(e: Error) -> f64 {
    match e {
        Error::QuadratureNonConvergence { estimate, .. } => estimate,
        _ => f64::NAN,
    }
}

fn build_spline(factor: &Arc<FactorDist>) -> Result<MarginalKind> {
    const EDGE: f64 = 5e-9;
    let f_lo = factor.quantile(EDGE)?;
    let f_hi = factor.quantile(1.0 - EDGE)?;
    let lo = normal::quantile(EDGE)? + f_lo;
    let hi = normal::quantile(1.0 - EDGE)? + f_hi;
    // Bulk: factor's 1e-4..1−1e-4 range widened by the Gaussian component.
    let core_lo = factor.quantile(1e-4)? - 6.0;
    let core_hi = factor.quantile(1.0 - 1e-4)? + 6.0;

    let grid = tailored_grid(core_lo, core_hi, lo, hi, 1500, 250, None);
    let mut cdf_vals = Vec::with_capacity(grid.len());
    let mut pdf_vals = Vec::with_capacity(grid.len());
    for &w in &grid {
        cdf_vals.push(hybrid_cdf(factor, w));
        pdf_vals.push(quad_pdf(factor, w));
    }
    for i in 1..cdf_vals.len() {
        if cdf_vals[i] < cdf_vals[i - 1] {
            cdf_vals[i] = cdf_vals[i - 1];
        }
    }
    Ok(MarginalKind::Spline {
        cdf: Pchip::new(grid.clone(), cdf_vals)?,
        pdf: CubicSpline::natural(grid, pdf_vals)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor::FactorSpec;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn marginal(spec: FactorSpec) -> MarginalW {
        MarginalW::new(Arc::new(FactorDist::new(spec).unwrap())).unwrap()
    }

    #[test]
    fn degenerate_factor_is_standard_normal() {
        let m = marginal(FactorSpec::gaussian());
        for &w in &[-3.0, -0.5, 0.0, 1.2, 4.0] {
            assert_eq!(m.cdf(w), normal::cdf(w));
            assert_eq!(m.pdf(w), normal::pdf(w));
        }
    }

    #[test]
    fn large_theta_one_sided_approaches_normal() {
        // V₀ → 0 in probability as θ grows; the bias at finite θ is
        // ≈ φ(0)·E[V₀] = 0.399/θ, so θ = 50 sits near 0.008.
        let m = marginal(FactorSpec::exponential(50.0));
        assert_abs_diff_eq!(m.cdf(0.0), 0.5, epsilon = 0.01);
        let m = marginal(FactorSpec::exponential(5000.0));
        assert_abs_diff_eq!(m.cdf(0.0), 0.5, epsilon = 1e-3);
    }

    #[test]
    fn exp_difference_closed_form_matches_quadrature() {
        let spec = FactorSpec::exponential_difference(1.7, 3.0);
        let m = marginal(spec);
        let factor = Arc::new(FactorDist::new(spec).unwrap());
        let mut w = -6.0;
        while w <= 8.0 {
            let closed = m.cdf(w);
            let quad = quad_cdf(&factor, w);
            assert_abs_diff_eq!(closed, quad, epsilon = 1e-9);
            w += 0.25;
        }
    }

    #[test]
    fn exp_one_sided_cdf_is_example_formula() {
        let theta = 1.7f64;
        let m = marginal(FactorSpec::exponential(theta));
        for &w in &[-2.0, 0.0, 1.0, 3.5] {
            let direct = normal::cdf(w)
                - exp(theta * theta / 2.0 - theta * w) * normal::cdf(w - theta);
            assert_abs_diff_eq!(m.cdf(w), direct, epsilon = 1e-12);
        }
    }

    #[test]
    fn marginal_pdf_normalizes_for_example_families() {
        let specs = [
            FactorSpec::exponential(1.7),
            FactorSpec::exponential_difference(1.7, 3.0),
            FactorSpec::OneSided { v1: OneSidedFactor::Pareto { theta: 0.8, beta: 3.0 } },
            FactorSpec::OneSided { v1: OneSidedFactor::Weibull { theta: 3.0, alpha: 0.8 } },
        ];
        let cfg = QuadratureConfig { abs_tol: 1e-12, rel_tol: 1e-9, max_subdivisions: 600 };
        for spec in specs {
            let m = marginal(spec);
            let lo = m.quantile(1e-9).unwrap();
            let hi = m.quantile(1.0 - 1e-9).unwrap();
            let mass = integrate(|w| m.pdf(w), Support::Finite(lo - 1.0, hi + 1.0), &cfg)
                .unwrap_or_else(|e| match e {
                    Error::QuadratureNonConvergence { estimate, .. } => estimate,
                    _ => f64::NAN,
                });
            assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-7);
        }
    }

    #[test]
    fn quantile_round_trip_all_families() {
        let specs = [
            FactorSpec::exponential(1.7),
            FactorSpec::exponential_difference(1.7, 3.0),
            FactorSpec::OneSided { v1: OneSidedFactor::Weibull { theta: 3.0, alpha: 0.8 } },
            FactorSpec::Difference {
                v1: OneSidedFactor::Pareto { theta: 0.8, beta: 3.0 },
                v2: OneSidedFactor::Pareto { theta: 2.5, beta: 5.0 },
            },
        ];
        for spec in specs {
            let m = marginal(spec);
            for i in 0..13 {
                let p = match i {
                    0 => 0.001,
                    12 => 0.999,
                    _ => i as f64 / 12.0,
                };
                let q = m.quantile(p).unwrap();
                assert_abs_diff_eq!(m.cdf(q), p, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn symmetric_difference_marginal_is_symmetric() {
        let m = marginal(FactorSpec::exponential_difference(2.2, 2.2));
        for &w in &[0.3, 1.0, 2.5, 4.0] {
            assert_abs_diff_eq!(m.pdf(w), m.pdf(-w), epsilon = 1e-10);
            assert_abs_diff_eq!(m.cdf(-w), m.survival(w), epsilon = 1e-12);
        }
    }

    #[test]
    fn cdf_strictly_increasing_on_grid() {
        let m = marginal(FactorSpec::exponential_difference(1.7, 3.0));
        let mut prev = m.cdf(-8.0);
        let mut w = -8.0 + 1e-3;
        while w <= 12.0 {
            let c = m.cdf(w);
            assert!(c > prev, "cdf not strictly increasing at {w}");
            prev = c;
            w += 1e-3;
        }
    }

    #[test]
    fn survival_complement_moderate_range() {
        let m = marginal(FactorSpec::exponential_difference(1.7, 3.0));
        for &w in &[-3.0, 0.0, 2.0, 5.0] {
            assert_abs_diff_eq!(m.survival(w), 1.0 - m.cdf(w), epsilon = 1e-12);
        }
    }

    #[test]
    fn spline_family_matches_exact_quadrature() {
        let spec = FactorSpec::Difference {
            v1: OneSidedFactor::Pareto { theta: 0.8, beta: 3.0 },
            v2: OneSidedFactor::Pareto { theta: 2.5, beta: 5.0 },
        };
        let m = marginal(spec);
        let factor = Arc::new(FactorDist::new(spec).unwrap());
        for &w in &[-6.0, -2.0, 0.0, 1.5, 4.0, 15.0] {
            assert_abs_diff_eq!(m.cdf(w), quad_cdf(&factor, w), epsilon = 5e-7);
            assert_abs_diff_eq!(m.pdf(w), quad_pdf(&factor, w), epsilon = 5e-6);
        }
    }

    #[test]
    fn pareto_one_sided_example3_form() {
        // F(w) = Φ(w−θ) − θ^β (2π)^{−1/2} ∫_{−∞}^{w−θ} (w−z)^{−β} e^{−z²/2} dz
        let (theta, beta) = (0.8, 3.0);
        let m = marginal(FactorSpec::OneSided {
            v1: OneSidedFactor::Pareto { theta, beta },
        });
        let cfg = QuadratureConfig::strict();
        for &w in &[0.0, 1.0, 2.5, 6.0] {
            let tail = integrate(
                |z| libm::pow(w - z, -beta) * normal::pdf(z),
                Support::LowerHalfLine(w - theta),
                &cfg,
            )
            .unwrap();
            let reference = normal::cdf(w - theta) - libm::pow(theta, beta) * tail;
            assert_abs_diff_eq!(m.cdf(w), reference, epsilon = 1e-8);
        }
    }
}
