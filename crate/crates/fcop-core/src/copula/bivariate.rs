//! Bivariate restriction of the factor copula: C₂(u₁,u₂), its survival
//! function, and Monte-Carlo pair sampling for the tail diagnostics.

use crate::error::{Error, Result};
use crate::factor::{FactorDist, FactorSpec, MarginalW};
use crate::numerics::math::sqrt;
use crate::numerics::normal;
use crate::numerics::quad::{integrate, QuadratureConfig, Support};
use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;
use rand::Rng;

const BVN_CFG: QuadratureConfig =
    QuadratureConfig { abs_tol: 1e-12, rel_tol: 1e-10, max_subdivisions: 200 };
const MIX_CFG: QuadratureConfig =
    QuadratureConfig { abs_tol: 1e-11, rel_tol: 1e-9, max_subdivisions: 250 };

/// Standard bivariate normal CDF P(X ≤ h, Y ≤ k) with correlation ρ,
/// through the conditional single integral ∫_{−∞}^h φ(t) Φ((k−ρt)/√(1−ρ²)) dt.
pub fn bvn_cdf(h: f64, k: f64, rho: f64) -> Result<f64> {
    if !(-1.0 < rho && rho < 1.0) {
        return Err(Error::Domain(format!("bvn_cdf needs |rho| < 1, got {rho}")));
    }
    let s = sqrt(1.0 - rho * rho);
    let val = integrate(
        |t| normal::pdf(t) * normal::cdf((k - rho * t) / s),
        Support::LowerHalfLine(h),
        &BVN_CFG,
    )?;
    Ok(val.clamp(0.0, 1.0))
}

/// P(X ≥ h, Y ≥ k) = Φ₂(−h, −k; ρ).
pub fn bvn_survival(h: f64, k: f64, rho: f64) -> Result<f64> {
    bvn_cdf(-h, -k, rho)
}

/// The copula of (W₁, W₂) for one pair of sites: Gaussian pair correlation
/// ρ_Z plus the shared factor.
#[derive(Debug, Clone)]
pub struct BivariateModel {
    rho: f64,
    factor: Arc<FactorDist>,
    marginal: Arc<MarginalW>,
}

impl BivariateModel {
    /// Build directly from a Gaussian-component correlation and factor.
    pub fn new(rho: f64, factor_spec: FactorSpec) -> Result<Self> {
        let factor = Arc::new(FactorDist::new(factor_spec)?);
        let marginal = Arc::new(MarginalW::new(Arc::clone(&factor))?);
        Self::from_parts(rho, factor, marginal)
    }

    pub(crate) fn from_parts(
        rho: f64,
        factor: Arc<FactorDist>,
        marginal: Arc<MarginalW>,
    ) -> Result<Self> {
        if !(-1.0 < rho && rho < 1.0) {
            return Err(Error::Domain(format!("pair correlation must be in (−1,1), got {rho}")));
        }
        Ok(Self { rho, factor, marginal })
    }

    #[inline]
    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn factor(&self) -> &Arc<FactorDist> {
        &self.factor
    }

    pub fn marginal(&self) -> &Arc<MarginalW> {
        &self.marginal
    }

    fn check_uniform(u: f64) -> Result<()> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::BoundaryUniform(u));
        }
        Ok(())
    }

    /// C₂(u₁, u₂) = P(U₁ ≤ u₁, U₂ ≤ u₂), to about 1e-7 absolute.
    pub fn cdf(&self, u1: f64, u2: f64) -> Result<f64> {
        Self::check_uniform(u1)?;
        Self::check_uniform(u2)?;
        let z1 = self.marginal.quantile(u1)?;
        let z2 = self.marginal.quantile(u2)?;
        self.joint_cdf_w(z1, z2)
    }

    /// Survival copula value P(U₁ > u₁, U₂ > u₂), accurate in the joint
    /// upper tail where 1 − 2u + C(u,u) would cancel.
    pub fn survival(&self, u1: f64, u2: f64) -> Result<f64> {
        Self::check_uniform(u1)?;
        Self::check_uniform(u2)?;
        let z1 = self.marginal.quantile(u1)?;
        let z2 = self.marginal.quantile(u2)?;
        self.joint_survival_w(z1, z2)
    }

    /// P(W₁ ≤ z₁, W₂ ≤ z₂) = ∫ Φ₂(z₁−v, z₂−v; ρ) dF_V(v).
    pub fn joint_cdf_w(&self, z1: f64, z2: f64) -> Result<f64> {
        if self.factor.is_degenerate() {
            return bvn_cdf(z1, z2, self.rho);
        }
        let mid = 0.5 * (z1 + z2);
        let edges = self.mixture_panels(mid);
        let mut acc = 0.0;
        for pair in edges.windows(2) {
            acc += integrate(
                |v| {
                    bvn_cdf(z1 - v, z2 - v, self.rho).unwrap_or(f64::NAN) * self.factor.pdf(v)
                },
                Support::Finite(pair[0], pair[1]),
                &MIX_CFG,
            )
            .unwrap_or_else(|e| match e {
                Error::QuadratureNonConvergence { estimate, .. } => estimate,
                _ => f64::NAN,
            });
        }
        if !acc.is_finite() {
            return Err(Error::Domain("bivariate cdf quadrature failed".into()));
        }
        Ok(acc.clamp(0.0, 1.0))
    }

    /// P(W₁ > z₁, W₂ > z₂) = ∫ Φ̄₂(z₁−v, z₂−v; ρ) dF_V(v) plus the mass of
    /// the truncated upper factor tail (which survives almost surely).
    pub fn joint_survival_w(&self, z1: f64, z2: f64) -> Result<f64> {
        if self.factor.is_degenerate() {
            return bvn_survival(z1, z2, self.rho);
        }
        let mid = 0.5 * (z1 + z2);
        let edges = self.mixture_panels(mid);
        let mut acc = 0.0;
        for pair in edges.windows(2) {
            acc += integrate(
                |v| {
                    bvn_survival(z1 - v, z2 - v, self.rho).unwrap_or(f64::NAN)
                        * self.factor.pdf(v)
                },
                Support::Finite(pair[0], pair[1]),
                &MIX_CFG,
            )
            .unwrap_or_else(|e| match e {
                Error::QuadratureNonConvergence { estimate, .. } => estimate,
                _ => f64::NAN,
            });
        }
        if !acc.is_finite() {
            return Err(Error::Domain("bivariate survival quadrature failed".into()));
        }
        Ok((acc + self.factor.survival(*edges.last().unwrap())).clamp(0.0, 1.0))
    }

    fn mixture_panels(&self, center: f64) -> Vec<f64> {
        const PROBS: [f64; 13] = [
            1e-14, 1e-10, 1e-6, 1e-3, 0.01, 0.1, 0.5, 0.9, 0.99, 0.999, 1.0 - 1e-6, 1.0 - 1e-10,
            1.0 - 1e-14,
        ];
        let mut edges: Vec<f64> =
            PROBS.iter().filter_map(|p| self.factor.quantile(*p).ok()).collect();
        let lo = edges[0];
        let hi = *edges.last().unwrap();
        for d in [-6.0, 0.0, 6.0] {
            let point = center + d;
            if point > lo && point < hi {
                edges.push(point);
            }
        }
        for k in self.factor.density_kinks() {
            if k > lo && k < hi {
                edges.push(k);
            }
        }
        edges.sort_by(|a, b| a.partial_cmp(b).unwrap());
        edges.dedup();
        edges
    }

    /// One draw of (U₁, U₂) from the pair copula.
    pub fn sample_uniform_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        let g1 = crate::simulation::draw_standard_normal(rng);
        let g2 = crate::simulation::draw_standard_normal(rng);
        let v = self.factor.sample(rng);
        let w1 = g1 + v;
        let w2 = self.rho * g1 + sqrt(1.0 - self.rho * self.rho) * g2 + v;
        (self.marginal.cdf(w1), self.marginal.cdf(w2))
    }
}
