//! Distributions of the common factor V₀.
//!
//! V₀ is either a single nonnegative variable V₁ ("one-sided") or a
//! difference V₁ − V₂ of independent nonnegative variables, with the
//! one-sided building blocks drawn from the exponential, Pareto and Weibull
//! families (plus a degenerate point mass at zero, which turns the whole
//! model into a plain Gaussian copula).
//!
//! The exponential difference has closed-form CDF/PDF. Other differences
//! are handled by one-dimensional convolution quadrature, cached on a
//! monotone spline grid at construction; evaluations beyond the grid fall
//! back to exact quadrature. [`FactorSpec`] is plain configuration data;
//! [`FactorDist`] is the evaluated object carrying the caches.

pub mod marginal;

pub use marginal::MarginalW;

use crate::error::{Error, Result};
use crate::numerics::interp::{CubicSpline, Pchip};
use crate::numerics::math::{exp, expm1, fabs, ln, ln_gamma, log1p, pow};
use crate::numerics::quad::{integrate, QuadratureConfig, Support};
use crate::numerics::roots::invert_monotone_cdf_with_pdf;
use alloc::format;
use alloc::vec::Vec;
use rand::Rng;

/// Distribution of one nonnegative component factor.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "family", rename_all = "snake_case", deny_unknown_fields))]
pub enum OneSidedFactor {
    /// F(v) = 1 − exp(−θv), v > 0.
    Exponential { theta: f64 },
    /// F(v) = 1 − (v/θ)^{−β}, v > θ. Variance exists only for β > 2.
    Pareto { theta: f64, beta: f64 },
    /// F(v) = 1 − exp(−θ v^α), v > 0.
    Weibull { theta: f64, alpha: f64 },
    /// Point mass at zero.
    DegenerateZero,
}

impl OneSidedFactor {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Exponential { theta } => theta > 0.0 && theta.is_finite(),
            Self::Pareto { theta, beta } => {
                theta > 0.0 && theta.is_finite() && beta > 0.0 && beta.is_finite()
            }
            Self::Weibull { theta, alpha } => {
                theta > 0.0 && theta.is_finite() && alpha > 0.0 && alpha.is_finite()
            }
            Self::DegenerateZero => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("factor parameters out of bounds: {self:?}")))
        }
    }

    /// Left edge of the support.
    pub fn support_lo(&self) -> f64 {
        match *self {
            Self::Pareto { theta, .. } => theta,
            _ => 0.0,
        }
    }

    pub fn is_degenerate(&self) -> bool {
        matches!(self, Self::DegenerateZero)
    }

    pub fn cdf(&self, v: f64) -> f64 {
        match *self {
            Self::Exponential { theta } => {
                if v <= 0.0 {
                    0.0
                } else {
                    -expm1(-theta * v)
                }
            }
            Self::Pareto { theta, beta } => {
                if v <= theta {
                    0.0
                } else {
                    -expm1(-beta * ln(v / theta))
                }
            }
            Self::Weibull { theta, alpha } => {
                if v <= 0.0 {
                    0.0
                } else {
                    -expm1(-theta * pow(v, alpha))
                }
            }
            Self::DegenerateZero => {
                if v < 0.0 {
                    0.0
                } else {
                    1.0
                }
            }
        }
    }

    /// Survival 1 − F(v) with full relative accuracy in the upper tail.
    pub fn survival(&self, v: f64) -> f64 {
        match *self {
            Self::Exponential { theta } => {
                if v <= 0.0 {
                    1.0
                } else {
                    exp(-theta * v)
                }
            }
            Self::Pareto { theta, beta } => {
                if v <= theta {
                    1.0
                } else {
                    exp(-beta * ln(v / theta))
                }
            }
            Self::Weibull { theta, alpha } => {
                if v <= 0.0 {
                    1.0
                } else {
                    exp(-theta * pow(v, alpha))
                }
            }
            Self::DegenerateZero => {
                if v < 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Density; for Weibull with α < 1 this diverges as v ↓ 0 (the
    /// singularity is integrable). The degenerate factor has no density.
    pub fn pdf(&self, v: f64) -> f64 {
        match *self {
            Self::Exponential { theta } => {
                if v <= 0.0 {
                    0.0
                } else {
                    theta * exp(-theta * v)
                }
            }
            Self::Pareto { theta, beta } => {
                if v <= theta {
                    0.0
                } else {
                    beta / theta * exp(-(beta + 1.0) * ln(v / theta))
                }
            }
            Self::Weibull { theta, alpha } => {
                if v <= 0.0 {
                    0.0
                } else {
                    theta * alpha * pow(v, alpha - 1.0) * exp(-theta * pow(v, alpha))
                }
            }
            Self::DegenerateZero => {
                if v == 0.0 {
                    f64::INFINITY
                } else {
                    0.0
                }
            }
        }
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Domain(format!("quantile needs p in (0,1), got {p}")));
        }
        Ok(match *self {
            Self::Exponential { theta } => -log1p(-p) / theta,
            Self::Pareto { theta, beta } => theta * exp(-log1p(-p) / beta),
            Self::Weibull { theta, alpha } => pow(-log1p(-p) / theta, 1.0 / alpha),
            Self::DegenerateZero => 0.0,
        })
    }

    /// Value whose survival probability is `s`; exact for s far below the
    /// resolution of 1 − s in floating point.
    pub fn survival_quantile(&self, s: f64) -> f64 {
        let s = s.clamp(1e-300, 1.0);
        match *self {
            Self::Exponential { theta } => -ln(s) / theta,
            Self::Pareto { theta, beta } => theta * exp(-ln(s) / beta),
            Self::Weibull { theta, alpha } => pow(-ln(s) / theta, 1.0 / alpha),
            Self::DegenerateZero => 0.0,
        }
    }

    pub fn mean(&self) -> Result<f64> {
        Ok(match *self {
            Self::Exponential { theta } => 1.0 / theta,
            Self::Pareto { theta, beta } => {
                if beta <= 1.0 {
                    return Err(Error::UnsupportedVariance(format!(
                        "Pareto mean needs beta > 1, got {beta}"
                    )));
                }
                theta * beta / (beta - 1.0)
            }
            Self::Weibull { theta, alpha } => {
                exp(-ln(theta) / alpha + ln_gamma(1.0 + 1.0 / alpha))
            }
            Self::DegenerateZero => 0.0,
        })
    }

    pub fn variance(&self) -> Result<f64> {
        Ok(match *self {
            Self::Exponential { theta } => 1.0 / (theta * theta),
            Self::Pareto { theta, beta } => {
                if beta <= 2.0 {
                    return Err(Error::UnsupportedVariance(format!(
                        "Pareto variance needs beta > 2, got {beta}"
                    )));
                }
                theta * theta * beta / ((beta - 1.0) * (beta - 1.0) * (beta - 2.0))
            }
            Self::Weibull { theta, alpha } => {
                let m1 = exp(ln_gamma(1.0 + 1.0 / alpha));
                let m2 = exp(ln_gamma(1.0 + 2.0 / alpha));
                exp(-2.0 * ln(theta) / alpha) * (m2 - m1 * m1)
            }
            Self::DegenerateZero => 0.0,
        })
    }
}

/// Specification of the common factor V₀.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "form", rename_all = "snake_case", deny_unknown_fields))]
pub enum FactorSpec {
    /// V₀ = V₁.
    OneSided { v1: OneSidedFactor },
    /// V₀ = V₁ − V₂ with V₁, V₂ independent; V₁ drives the upper tail and
    /// V₂ the lower tail.
    Difference { v1: OneSidedFactor, v2: OneSidedFactor },
}

impl FactorSpec {
    /// The Gaussian-copula baseline: a factor that is identically zero.
    pub fn gaussian() -> Self {
        Self::OneSided { v1: OneSidedFactor::DegenerateZero }
    }

    pub fn exponential(theta: f64) -> Self {
        Self::OneSided { v1: OneSidedFactor::Exponential { theta } }
    }

    pub fn exponential_difference(theta1: f64, theta2: f64) -> Self {
        Self::Difference {
            v1: OneSidedFactor::Exponential { theta: theta1 },
            v2: OneSidedFactor::Exponential { theta: theta2 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::OneSided { v1 } => v1.validate(),
            Self::Difference { v1, v2 } => {
                v1.validate()?;
                v2.validate()
            }
        }
    }

    pub fn is_degenerate(&self) -> bool {
        match self {
            Self::OneSided { v1 } => v1.is_degenerate(),
            Self::Difference { v1, v2 } => v1.is_degenerate() && v2.is_degenerate(),
        }
    }

    /// σ₀² = Var(V₁) (+ Var(V₂) for the difference form).
    pub fn variance(&self) -> Result<f64> {
        match self {
            Self::OneSided { v1 } => v1.variance(),
            Self::Difference { v1, v2 } => Ok(v1.variance()? + v2.variance()?),
        }
    }

    pub fn mean(&self) -> Result<f64> {
        match self {
            Self::OneSided { v1 } => v1.mean(),
            Self::Difference { v1, v2 } => Ok(v1.mean()? - v2.mean()?),
        }
    }
}

/// Closed-form cases recognized by the likelihood layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClosedFactorForm {
    /// Degenerate factor: the model is the Gaussian copula.
    Gaussian,
    /// V₀ ~ Exp(θ).
    ExponentialOneSided { theta: f64 },
    /// V₀ = Exp(θ₁) − Exp(θ₂).
    ExponentialDifference { theta1: f64, theta2: f64 },
}

enum FactorKind {
    Degenerate,
    OneSided(OneSidedFactor),
    /// V₀ = −V₂ (one-sided slot degenerate); rare but well-defined.
    Mirrored(OneSidedFactor),
    ExpDifference { theta1: f64, theta2: f64 },
    NumericDifference(DiffTables),
}

/// Evaluated factor distribution with any caches it needs.
///
/// Immutable after construction; spline caches are read-only afterwards, so
/// instances can be shared freely across threads.
pub struct FactorDist {
    spec: FactorSpec,
    kind: FactorKind,
    /// Quantile-informed panel edges for integrating kernels against the
    /// density (computed once; heavy tails make ad-hoc panels expensive).
    panel_edges: Vec<f64>,
}

impl FactorDist {
    pub fn new(spec: FactorSpec) -> Result<Self> {
        spec.validate()?;
        let kind = match spec {
            FactorSpec::OneSided { v1 } => {
                if v1.is_degenerate() {
                    FactorKind::Degenerate
                } else {
                    FactorKind::OneSided(v1)
                }
            }
            FactorSpec::Difference { v1, v2 } => match (v1.is_degenerate(), v2.is_degenerate()) {
                (true, true) => FactorKind::Degenerate,
                (false, true) => FactorKind::OneSided(v1),
                (true, false) => FactorKind::Mirrored(v2),
                (false, false) => {
                    if let (
                        OneSidedFactor::Exponential { theta: t1 },
                        OneSidedFactor::Exponential { theta: t2 },
                    ) = (v1, v2)
                    {
                        FactorKind::ExpDifference { theta1: t1, theta2: t2 }
                    } else {
                        FactorKind::NumericDifference(DiffTables::build(v1, v2)?)
                    }
                }
            },
        };
        let mut dist = Self { spec, kind, panel_edges: Vec::new() };
        const PROBS: [f64; 13] = [
            1e-14, 1e-10, 1e-6, 1e-3, 0.01, 0.1, 0.5, 0.9, 0.99, 0.999, 1.0 - 1e-6,
            1.0 - 1e-10, 1.0 - 1e-14,
        ];
        let mut edges: Vec<f64> = PROBS.iter().filter_map(|p| dist.quantile(*p).ok()).collect();
        for k in dist.density_kinks() {
            if edges.first().is_some_and(|lo| k > *lo)
                && edges.last().is_some_and(|hi| k < *hi)
            {
                edges.push(k);
            }
        }
        edges.sort_by(|a, b| a.partial_cmp(b).unwrap());
        edges.dedup();
        dist.panel_edges = edges;
        Ok(dist)
    }

    /// Cached quantile/kink panel edges spanning the effective support.
    pub fn panel_edges(&self) -> &[f64] {
        &self.panel_edges
    }

    pub fn spec(&self) -> &FactorSpec {
        &self.spec
    }

    pub fn is_degenerate(&self) -> bool {
        matches!(self.kind, FactorKind::Degenerate)
    }

    pub fn closed_form(&self) -> Option<ClosedFactorForm> {
        match self.kind {
            FactorKind::Degenerate => Some(ClosedFactorForm::Gaussian),
            FactorKind::OneSided(OneSidedFactor::Exponential { theta }) => {
                Some(ClosedFactorForm::ExponentialOneSided { theta })
            }
            FactorKind::ExpDifference { theta1, theta2 } => {
                Some(ClosedFactorForm::ExponentialDifference { theta1, theta2 })
            }
            _ => None,
        }
    }

    pub fn variance(&self) -> Result<f64> {
        self.spec.variance()
    }

    pub fn mean(&self) -> Result<f64> {
        self.spec.mean()
    }

    pub fn cdf(&self, v: f64) -> f64 {
        match &self.kind {
            FactorKind::Degenerate => {
                if v < 0.0 {
                    0.0
                } else {
                    1.0
                }
            }
            FactorKind::OneSided(f) => f.cdf(v),
            FactorKind::Mirrored(f) => f.survival(-v),
            FactorKind::ExpDifference { theta1, theta2 } => exp_diff_cdf(*theta1, *theta2, v),
            FactorKind::NumericDifference(t) => t.cdf(v),
        }
    }

    /// 1 − F with relative accuracy preserved in the upper tail.
    pub fn survival(&self, v: f64) -> f64 {
        match &self.kind {
            FactorKind::Degenerate => {
                if v < 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            FactorKind::OneSided(f) => f.survival(v),
            FactorKind::Mirrored(f) => f.cdf(-v),
            FactorKind::ExpDifference { theta1, theta2 } => {
                if v >= 0.0 {
                    *theta2 / (theta1 + theta2) * exp(-theta1 * v)
                } else {
                    1.0 - exp_diff_cdf(*theta1, *theta2, v)
                }
            }
            FactorKind::NumericDifference(t) => t.survival(v),
        }
    }

    pub fn pdf(&self, v: f64) -> f64 {
        match &self.kind {
            FactorKind::Degenerate => {
                if v == 0.0 {
                    f64::INFINITY
                } else {
                    0.0
                }
            }
            FactorKind::OneSided(f) => f.pdf(v),
            FactorKind::Mirrored(f) => f.pdf(-v),
            FactorKind::ExpDifference { theta1, theta2 } => {
                let k = theta1 * theta2 / (theta1 + theta2);
                if v >= 0.0 {
                    k * exp(-theta1 * v)
                } else {
                    k * exp(*theta2 * v)
                }
            }
            FactorKind::NumericDifference(t) => t.pdf(v),
        }
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Domain(format!("quantile needs p in (0,1), got {p}")));
        }
        match &self.kind {
            FactorKind::Degenerate => Ok(0.0),
            FactorKind::OneSided(f) => f.quantile(p),
            FactorKind::Mirrored(f) => Ok(-f.quantile(1.0 - p)?),
            FactorKind::ExpDifference { theta1, theta2 } => {
                let p0 = theta1 / (theta1 + theta2);
                if p <= p0 {
                    Ok(ln(p / p0) / theta2)
                } else {
                    Ok(-ln((1.0 - p) * (theta1 + theta2) / theta2) / theta1)
                }
            }
            FactorKind::NumericDifference(t) => t.quantile(p),
        }
    }

    /// One inverse-transform (or composition) draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.kind {
            FactorKind::Degenerate => 0.0,
            FactorKind::OneSided(f) => f.quantile(open_unit(rng)).unwrap_or(0.0),
            FactorKind::Mirrored(f) => -f.quantile(open_unit(rng)).unwrap_or(0.0),
            FactorKind::ExpDifference { .. } | FactorKind::NumericDifference(_) => {
                // Composition: draw the two components separately.
                let (v1, v2) = self.components().expect("difference form has components");
                let a = v1.quantile(open_unit(rng)).unwrap_or(0.0);
                let b = v2.quantile(open_unit(rng)).unwrap_or(0.0);
                a - b
            }
        }
    }

    fn components(&self) -> Option<(OneSidedFactor, OneSidedFactor)> {
        match self.spec {
            FactorSpec::Difference { v1, v2 } => Some((v1, v2)),
            FactorSpec::OneSided { .. } => None,
        }
    }

    /// Points where the factor density has a jump, kink or integrable cusp;
    /// quadratures against the density should split panels here.
    pub fn density_kinks(&self) -> Vec<f64> {
        match &self.kind {
            FactorKind::Degenerate => alloc::vec![0.0],
            FactorKind::OneSided(f) => alloc::vec![f.support_lo()],
            FactorKind::Mirrored(f) => alloc::vec![-f.support_lo()],
            FactorKind::ExpDifference { .. } => alloc::vec![0.0],
            FactorKind::NumericDifference(t) => alloc::vec![t.kink],
        }
    }

    /// Interval outside which V₀ carries at most `eps` of probability on
    /// each side (finite even for unbounded supports; used as integration
    /// and spline windows).
    pub fn quantile_bounds(&self, eps: f64) -> (f64, f64) {
        let e = eps.clamp(1e-300, 0.4);
        match &self.kind {
            FactorKind::Degenerate => (0.0, 0.0),
            FactorKind::OneSided(f) => (f.support_lo(), f.survival_quantile(e)),
            FactorKind::Mirrored(f) => (-f.survival_quantile(e), -f.support_lo()),
            FactorKind::ExpDifference { theta1, theta2 } => (ln(e) / theta2, -ln(e) / theta1),
            FactorKind::NumericDifference(t) => {
                let lo = t.v1.support_lo() - t.v2.survival_quantile(e);
                let hi = t.v1.survival_quantile(e) - t.v2.support_lo();
                (lo, hi)
            }
        }
    }
}

impl core::fmt::Debug for FactorDist {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("FactorDist").field("spec", &self.spec).finish()
    }
}

/// F_{V₀} for V₀ = Exp(θ₁) − Exp(θ₂):
/// F(v) = exp{−θ₂(−v)₊}·{1 − θ₂ exp(−θ₁ v₊)/(θ₁+θ₂)}.
fn exp_diff_cdf(theta1: f64, theta2: f64, v: f64) -> f64 {
    if v >= 0.0 {
        1.0 - theta2 / (theta1 + theta2) * exp(-theta1 * v)
    } else {
        theta1 / (theta1 + theta2) * exp(theta2 * v)
    }
}

#[inline]
fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // Uniform on (0,1): reject the exact endpoints so quantiles stay finite.
    loop {
        let u: f64 = rng.gen();
        if u > 0.0 && u < 1.0 {
            return u;
        }
    }
}

/// Spline-cached distribution of a general difference V₁ − V₂.
struct DiffTables {
    v1: OneSidedFactor,
    v2: OneSidedFactor,
    cdf: Pchip,
    pdf: CubicSpline,
    /// Point where the convolution integrand's support edge crosses; the
    /// density can have a kink (or an integrable cusp) here.
    kink: f64,
}

impl DiffTables {
    fn build(v1: OneSidedFactor, v2: OneSidedFactor) -> Result<Self> {
        const EDGE_EPS: f64 = 1e-12;
        let lo = v1.support_lo() - v2.survival_quantile(EDGE_EPS);
        let hi = v1.survival_quantile(EDGE_EPS) - v2.support_lo();
        // Bulk of the mass; heavy tails get geometric knots beyond it.
        let core_lo = v1.support_lo() - v2.survival_quantile(1e-4);
        let core_hi = v1.survival_quantile(1e-4) - v2.support_lo();
        let kink = v1.support_lo() - v2.support_lo();

        let grid = tailored_grid(core_lo, core_hi, lo, hi, 1500, 250, Some(kink));

        let mut cdf_vals = Vec::with_capacity(grid.len());
        let mut pdf_vals = Vec::with_capacity(grid.len());
        for &v in &grid {
            cdf_vals.push(conv_cdf(v1, v2, v)?.clamp(0.0, 1.0));
            let d = conv_pdf(v1, v2, v)?;
            pdf_vals.push(if d.is_finite() { d.max(0.0) } else { 0.0 });
        }
        // Enforce monotonicity against quadrature noise at the 1e-12 level.
        for i in 1..cdf_vals.len() {
            if cdf_vals[i] < cdf_vals[i - 1] {
                cdf_vals[i] = cdf_vals[i - 1];
            }
        }

        Ok(Self {
            v1,
            v2,
            cdf: Pchip::new(grid.clone(), cdf_vals)?,
            pdf: CubicSpline::natural(grid, pdf_vals)?,
            kink,
        })
    }

    fn cdf(&self, v: f64) -> f64 {
        if v < self.cdf.lo() || v > self.cdf.hi() {
            return conv_cdf(self.v1, self.v2, v).unwrap_or(if v < self.kink { 0.0 } else { 1.0 });
        }
        self.cdf.eval(v).clamp(0.0, 1.0)
    }

    fn survival(&self, v: f64) -> f64 {
        let c = self.cdf(v);
        if c <= 0.999 {
            return 1.0 - c;
        }
        conv_survival(self.v1, self.v2, v).unwrap_or(1.0 - c)
    }

    fn pdf(&self, v: f64) -> f64 {
        if v < self.pdf.lo() || v > self.pdf.hi() {
            return conv_pdf(self.v1, self.v2, v).unwrap_or(0.0);
        }
        self.pdf.eval(v).max(0.0)
    }

    fn quantile(&self, p: f64) -> Result<f64> {
        let lo_p = self.cdf.eval(self.cdf.lo());
        let hi_p = self.cdf.eval(self.cdf.hi());
        if p > lo_p && p < hi_p {
            return invert_monotone_cdf_with_pdf(
                |v| self.cdf.eval(v).clamp(0.0, 1.0),
                |v| self.cdf.eval_derivative(v).max(0.0),
                p,
                (self.cdf.lo(), self.cdf.hi()),
                1e-12,
            );
        }
        // Outside the table: exact quadrature with an expanding bracket.
        invert_monotone_cdf_with_pdf(
            |v| conv_cdf(self.v1, self.v2, v).unwrap_or(if v < self.kink { 0.0 } else { 1.0 }),
            |v| conv_pdf(self.v1, self.v2, v).unwrap_or(0.0),
            p,
            (self.cdf.lo() - 1.0, self.cdf.hi() + 1.0),
            1e-12,
        )
    }
}

/// Spline abscissae: `n_core` uniform knots over the bulk, `n_tail`
/// geometrically spaced knots out to each extreme, and an optional
/// geometric cluster shadowing a kink (without a knot exactly on it).
pub(crate) fn tailored_grid(
    core_lo: f64,
    core_hi: f64,
    lo: f64,
    hi: f64,
    n_core: usize,
    n_tail: usize,
    cluster_at: Option<f64>,
) -> Vec<f64> {
    let core_lo = core_lo.max(lo);
    let core_hi = core_hi.min(hi);
    let mut grid = Vec::with_capacity(n_core + 2 * n_tail + 160);
    for i in 0..=n_core {
        grid.push(core_lo + (core_hi - core_lo) * i as f64 / n_core as f64);
    }
    let step = (core_hi - core_lo) / n_core as f64;
    let _ = step;
    for (edge, target, sign) in [(core_lo, lo, -1.0), (core_hi, hi, 1.0)] {
        let span = fabs(target - edge);
        if span <= step {
            continue;
        }
        let ratio = pow(span / step, 1.0 / n_tail as f64);
        let mut d = step;
        for _ in 0..n_tail {
            d *= ratio;
            let x = edge + sign * d.min(span);
            grid.push(x);
        }
        grid.push(target);
    }
    if let Some(k) = cluster_at {
        if k > lo && k < hi {
            // Log-spaced offsets from 1e-12·span out to an eighth of the
            // core: the derivative can vary fast well beyond one step.
            let d_max = (core_hi - core_lo) / 8.0;
            let d_min = 1e-12 * (hi - lo);
            let n_cluster = 180;
            let ratio = pow(d_max / d_min, 1.0 / n_cluster as f64);
            let mut d = d_min;
            for _ in 0..=n_cluster {
                if k - d > lo {
                    grid.push(k - d);
                }
                if k + d < hi {
                    grid.push(k + d);
                }
                d *= ratio;
            }
        }
    }
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    grid.dedup();
    grid
}

const CONV_CFG: QuadratureConfig =
    QuadratureConfig { abs_tol: 1e-13, rel_tol: 1e-10, max_subdivisions: 300 };

/// Integration panels for the conditioning variable V₂: quantile-spaced
/// edges (heavy tails span decades) plus a split at t = e₁ − v where V₁'s
/// support edge crosses (density jumps/cusps live there).
fn v2_panels(v1: OneSidedFactor, v2: OneSidedFactor, v: f64) -> Vec<f64> {
    const SURVIVALS: [f64; 8] = [0.5, 0.1, 0.01, 1e-3, 1e-6, 1e-9, 1e-12, 1e-15];
    let lo = v2.support_lo();
    let mut edges = alloc::vec![lo];
    edges.extend(SURVIVALS.iter().map(|s| v2.survival_quantile(*s)));
    let hi = *edges.last().unwrap();
    let split_t = v1.support_lo() - v;
    if split_t > lo && split_t < hi {
        edges.push(split_t);
    }
    edges.sort_by(|a, b| a.partial_cmp(b).unwrap());
    edges.dedup();
    edges
}

fn integrate_v2_panels<F: Fn(f64) -> f64>(f: F, edges: &[f64], accept_estimate: bool) -> Result<f64> {
    let mut acc = 0.0;
    for pair in edges.windows(2) {
        acc += match integrate(&f, Support::Finite(pair[0], pair[1]), &CONV_CFG) {
            Ok(x) => x,
            Err(Error::QuadratureNonConvergence { estimate, .. }) if accept_estimate => estimate,
            Err(e) => return Err(e),
        };
    }
    Ok(acc)
}

/// P(V₁ − V₂ ≤ v) = ∫ F₁(v + t) f₂(t) dt.
fn conv_cdf(v1: OneSidedFactor, v2: OneSidedFactor, v: f64) -> Result<f64> {
    let edges = v2_panels(v1, v2, v);
    let total = integrate_v2_panels(|t| v1.cdf(v + t) * v2.pdf(t), &edges, false)?;
    // Truncated upper tail of V₂: F₁(v+t) ≈ 1 there, contribute its mass.
    Ok(total + v2.survival(*edges.last().unwrap()))
}

/// P(V₁ − V₂ ≥ v) = ∫ S₁(v + t) f₂(t) dt, relative accuracy preserved.
fn conv_survival(v1: OneSidedFactor, v2: OneSidedFactor, v: f64) -> Result<f64> {
    let edges = v2_panels(v1, v2, v);
    let total = integrate_v2_panels(|t| v1.survival(v + t) * v2.pdf(t), &edges, false)?;
    let hi = *edges.last().unwrap();
    Ok(total + v2.survival(hi) * v1.survival(v + hi))
}

/// Density of V₁ − V₂ at v: ∫ f₁(v + t) f₂(t) dt. Non-convergence near the
/// integrable cusp keeps the last estimate; the spline grid is clustered
/// there anyway.
fn conv_pdf(v1: OneSidedFactor, v2: OneSidedFactor, v: f64) -> Result<f64> {
    let edges = v2_panels(v1, v2, v);
    integrate_v2_panels(|t| v1.pdf(v + t) * v2.pdf(t), &edges, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exp_diff_cdf_values() {
        // Symmetric case: F(0) = 1/2.
        let d = FactorDist::new(FactorSpec::exponential_difference(2.0, 2.0)).unwrap();
        assert_abs_diff_eq!(d.cdf(0.0), 0.5, epsilon = 1e-15);

        // Asymmetric closed form at v = 0: 1 − θ₂/(θ₁+θ₂).
        let d = FactorDist::new(FactorSpec::exponential_difference(1.7, 3.0)).unwrap();
        assert_abs_diff_eq!(d.cdf(0.0), 1.0 - 3.0 / 4.7, epsilon = 1e-9);
        assert_abs_diff_eq!(d.cdf(0.0), 0.361702, epsilon = 1e-6);
    }

    #[test]
    fn exp_diff_pdf_continuous_at_zero() {
        let (t1, t2) = (1.7, 3.0);
        let d = FactorDist::new(FactorSpec::exponential_difference(t1, t2)).unwrap();
        let k = t1 * t2 / (t1 + t2);
        assert_abs_diff_eq!(d.pdf(0.0), k, epsilon = 1e-12);
        assert_abs_diff_eq!(d.pdf(1e-9), k, epsilon = 1e-6);
        assert_abs_diff_eq!(d.pdf(-1e-9), k, epsilon = 1e-6);
    }

    #[test]
    fn pareto_survival_closed_value() {
        let f = OneSidedFactor::Pareto { theta: 0.8, beta: 3.0 };
        assert_abs_diff_eq!(f.survival(1.6), 0.125, epsilon = 1e-12);
    }

    #[test]
    fn weibull_alpha_one_is_exponential() {
        let w = OneSidedFactor::Weibull { theta: 1.3, alpha: 1.0 };
        let e = OneSidedFactor::Exponential { theta: 1.3 };
        for &v in &[0.1, 0.7, 2.0, 5.0] {
            assert_relative_eq!(w.survival(v), e.survival(v), max_relative = 1e-14);
            assert_relative_eq!(w.pdf(v), e.pdf(v), max_relative = 1e-14);
        }
    }

    #[test]
    fn factor_variance_cases() {
        let d = FactorDist::new(FactorSpec::exponential_difference(1.0, 1.0)).unwrap();
        assert_abs_diff_eq!(d.variance().unwrap(), 2.0, epsilon = 1e-14);

        let g = FactorDist::new(FactorSpec::gaussian()).unwrap();
        assert_eq!(g.variance().unwrap(), 0.0);

        let w = FactorDist::new(FactorSpec::OneSided {
            v1: OneSidedFactor::Weibull { theta: 1.0, alpha: 1.0 },
        })
        .unwrap();
        assert_relative_eq!(w.variance().unwrap(), 1.0, max_relative = 1e-12);

        let p = FactorSpec::OneSided { v1: OneSidedFactor::Pareto { theta: 1.0, beta: 1.5 } };
        assert!(matches!(
            FactorDist::new(p).unwrap().variance(),
            Err(Error::UnsupportedVariance(_))
        ));
    }

    #[test]
    fn factor_densities_normalize() {
        // Quadrature of every implemented density over its support = 1.
        let cfg = QuadratureConfig { abs_tol: 1e-12, rel_tol: 1e-9, max_subdivisions: 400 };
        let specs = [
            FactorSpec::exponential(1.7),
            FactorSpec::OneSided { v1: OneSidedFactor::Pareto { theta: 0.8, beta: 3.0 } },
            FactorSpec::OneSided { v1: OneSidedFactor::Weibull { theta: 3.0, alpha: 0.8 } },
            FactorSpec::exponential_difference(1.7, 3.0),
            FactorSpec::Difference {
                v1: OneSidedFactor::Pareto { theta: 0.8, beta: 3.0 },
                v2: OneSidedFactor::Pareto { theta: 2.5, beta: 5.0 },
            },
            FactorSpec::Difference {
                v1: OneSidedFactor::Weibull { theta: 3.0, alpha: 0.8 },
                v2: OneSidedFactor::Weibull { theta: 2.5, alpha: 0.6 },
            },
        ];
        for spec in specs {
            let d = FactorDist::new(spec).unwrap();
            let (lo, hi) = d.quantile_bounds(1e-12);
            let mass = integrate(|v| d.pdf(v), Support::Finite(lo, hi), &cfg)
                .unwrap_or_else(|e| match e {
                    Error::QuadratureNonConvergence { estimate, .. } => estimate,
                    _ => f64::NAN,
                });
            assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-7);
        }
    }

    #[test]
    fn survival_is_complement_of_cdf() {
        let specs = [
            FactorSpec::exponential(1.7),
            FactorSpec::exponential_difference(1.7, 3.0),
            FactorSpec::Difference {
                v1: OneSidedFactor::Pareto { theta: 0.8, beta: 3.0 },
                v2: OneSidedFactor::Pareto { theta: 2.5, beta: 5.0 },
            },
        ];
        for spec in specs {
            let d = FactorDist::new(spec).unwrap();
            for i in -20..=20 {
                let v = i as f64 * 0.25;
                assert_abs_diff_eq!(d.survival(v), 1.0 - d.cdf(v), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn weibull_tail_order_matches_parameterization() {
        // −log S(v) / (θ v^α) → 1 for large v.
        let (theta, alpha) = (3.0, 0.8);
        let f = OneSidedFactor::Weibull { theta, alpha };
        for &v in &[20.0, 40.0] {
            let ratio = -ln(f.survival(v)) / (theta * pow(v, alpha));
            assert_relative_eq!(ratio, 1.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn pareto_difference_cdf_matches_monte_carlo() {
        let spec = FactorSpec::Difference {
            v1: OneSidedFactor::Pareto { theta: 0.8, beta: 3.0 },
            v2: OneSidedFactor::Pareto { theta: 2.5, beta: 5.0 },
        };
        let d = FactorDist::new(spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(20_240_101);
        let n = 1_000_000usize;
        let mut draws: Vec<f64> = (0..n).map(|_| d.sample(&mut rng)).collect();
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for &v in &[-3.0, -1.7, -1.0, 0.0, 0.5, 2.0, 5.0] {
            let emp = draws.partition_point(|x| *x <= v) as f64 / n as f64;
            assert_abs_diff_eq!(d.cdf(v), emp, epsilon = 0.003);
        }
    }

    #[test]
    fn sampling_matches_cdf_ks() {
        let specs = [
            FactorSpec::exponential_difference(1.7, 3.0),
            FactorSpec::Difference {
                v1: OneSidedFactor::Weibull { theta: 3.0, alpha: 0.8 },
                v2: OneSidedFactor::Weibull { theta: 2.5, alpha: 0.6 },
            },
        ];
        for (k, spec) in specs.into_iter().enumerate() {
            let d = FactorDist::new(spec).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(7 + k as u64);
            let n = 100_000usize;
            let mut draws: Vec<f64> = (0..n).map(|_| d.sample(&mut rng)).collect();
            draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut ks = 0.0f64;
            for (i, &x) in draws.iter().enumerate() {
                let c = d.cdf(x);
                let hi = (i + 1) as f64 / n as f64;
                let lo = i as f64 / n as f64;
                ks = ks.max(fabs(c - hi)).max(fabs(c - lo));
            }
            assert!(ks < 0.006, "KS statistic {ks} too large for spec {k}");
        }
    }

    #[test]
    fn degenerate_factor_samples_zero() {
        let d = FactorDist::new(FactorSpec::gaussian()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            assert_eq!(d.sample(&mut rng), 0.0);
        }
        assert_eq!(d.quantile(0.3).unwrap(), 0.0);
    }

    #[test]
    fn exponential_sample_mean_lln() {
        let theta = 2.5;
        let d = FactorDist::new(FactorSpec::exponential(theta)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 1_000_000;
        let mean: f64 = (0..n).map(|_| d.sample(&mut rng)).sum::<f64>() / n as f64;
        assert_relative_eq!(mean, 1.0 / theta, max_relative = 0.005);
    }

    #[test]
    fn symmetric_difference_has_zero_skewness() {
        // The skewness estimator's MC error here is ≈ sqrt(63/N), so 1e7
        // draws put the 0.01 band at four standard errors.
        let d = FactorDist::new(FactorSpec::exponential_difference(1.5, 1.5)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 10_000_000;
        let draws: Vec<f64> = (0..n).map(|_| d.sample(&mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let m2 = draws.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        let m3 = draws.iter().map(|x| libm::pow(x - mean, 3.0)).sum::<f64>() / n as f64;
        let skew = m3 / libm::pow(m2, 1.5);
        assert_abs_diff_eq!(skew, 0.0, epsilon = 0.01);
    }

    #[test]
    fn numeric_difference_quantile_round_trip() {
        let spec = FactorSpec::Difference {
            v1: OneSidedFactor::Pareto { theta: 0.8, beta: 3.0 },
            v2: OneSidedFactor::Pareto { theta: 2.5, beta: 5.0 },
        };
        let d = FactorDist::new(spec).unwrap();
        for &p in &[0.001, 0.05, 0.3617, 0.5, 0.9, 0.999] {
            let q = d.quantile(p).unwrap();
            assert_abs_diff_eq!(d.cdf(q), p, epsilon = 1e-9);
        }
    }

}
