//! Conditional distributions at unobserved sites (kriging on the copula
//! scale).
//!
//! The (n+1)-dimensional conditional copula reduces to a one-dimensional
//! mixture over the factor: given observed W = z and V₀ = v, the Gaussian
//! component at the target site is a textbook conditional normal,
//!
//! ```text
//! W₀ | (V₀ = v, W = z) ~ N(kᵀz + v(1 − kᵀ1), τ²),
//! k = Σ⁻¹σ₀,  τ² = 1 − σ₀ᵀΣ⁻¹σ₀,
//! ```
//!
//! and the factor posterior is π(v | z) ∝ exp{−(a/2)(v − b/a)²} dF_V(v)
//! with the same completed-square statistics the likelihood uses. One outer
//! quadrature over v therefore yields the conditional CDF; nothing
//! (n+1)-dimensional is ever evaluated.

use crate::copula::FactorCopulaModel;
use crate::error::{Error, Result};
use crate::numerics::linalg::dot;
use crate::numerics::math::{exp, ln, sqrt};
use crate::numerics::normal;
use crate::numerics::quad::{integrate, QuadratureConfig, Support};
use crate::numerics::roots::invert_monotone_cdf;
use crate::spatial::{correlation_vector, LocationSet};
use alloc::format;
use alloc::vec::Vec;

const POSTERIOR_CFG: QuadratureConfig =
    QuadratureConfig { abs_tol: 1e-12, rel_tol: 1e-9, max_subdivisions: 250 };
const INNER_CFG: QuadratureConfig =
    QuadratureConfig { abs_tol: 1e-11, rel_tol: 1e-8, max_subdivisions: 150 };

/// How predicted uniforms are mapped back to an observation scale.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields))]
pub enum BackTransform {
    /// Leave predictions on the uniform scale.
    Uniform,
    /// Normal scores Φ⁻¹(u).
    NormalScores,
    /// Student-t marginal quantile.
    StudentT { mean: f64, sd: f64, df: f64 },
}

impl BackTransform {
    pub fn apply(&self, u: f64) -> Result<f64> {
        match *self {
            Self::Uniform => Ok(u),
            Self::NormalScores => normal::quantile(u),
            Self::StudentT { mean, sd, df } => {
                crate::inference::MarginalModel::ParametricStudentT { mean, sd, df }
                    .observation_from(u)
            }
        }
    }
}

/// Conditioning information shared by every target site: the observed
/// uniforms on the W scale plus the factor-posterior statistics.
#[derive(Debug)]
pub struct PredictionRequest<'a> {
    model: &'a FactorCopulaModel,
    z: Vec<f64>,
    /// b = 1ᵀΣ⁻¹z.
    b: f64,
    /// Posterior window and scaled normalizer for the factor mixture.
    window: (f64, f64),
    log_peak: f64,
    norm: f64,
}

impl<'a> PredictionRequest<'a> {
    /// `observed_u` are the uniforms at the model's sites (one replicate).
    pub fn new(model: &'a FactorCopulaModel, observed_u: &[f64]) -> Result<Self> {
        if observed_u.len() != model.n() {
            return Err(Error::DimensionMismatch(format!(
                "observed vector has length {}, model has {} sites",
                observed_u.len(),
                model.n()
            )));
        }
        let z = model.quantile_transform(observed_u)?;
        let b = dot(model.sigma_inv_one(), &z);
        let a = model.ones_quad();

        // Factor posterior kernel: exp(−(a/2)(v − b/a)²) dF(v), windowed and
        // peak-scaled exactly like the likelihood integral.
        let factor = model.factor();
        if factor.is_degenerate() {
            return Ok(Self { model, z, b, window: (0.0, 0.0), log_peak: 0.0, norm: 1.0 });
        }
        let m = b / a;
        let half = 9.5 / sqrt(a);
        let (f_lo, f_hi) = factor.quantile_bounds(1e-18);
        let lo = if m - half > f_lo { m - half } else { f_lo };
        let hi = if m + half < f_hi { m + half } else { f_hi };
        let (lo, hi) = if lo < hi {
            (lo, hi)
        } else if m < f_lo {
            (f_lo, (f_lo + 2.0 * half).min(f_hi))
        } else {
            ((f_hi - 2.0 * half).max(f_lo), f_hi)
        };

        let log_kernel = |v: f64| -0.5 * a * (v - m) * (v - m) + ln(factor.pdf(v));
        let mut peak = f64::NEG_INFINITY;
        for i in 0..=96 {
            let v = lo + (hi - lo) * i as f64 / 96.0;
            let g = log_kernel(v);
            if g.is_finite() && g > peak {
                peak = g;
            }
        }
        if !peak.is_finite() {
            return Err(Error::Domain("factor posterior carries no mass".into()));
        }
        let norm = posterior_quadrature(factor, a, m, peak, (lo, hi), |_| 1.0)?;
        if !(norm > 0.0) {
            return Err(Error::Domain("factor posterior normalizer vanished".into()));
        }
        Ok(Self { model, z, b, window: (lo, hi), log_peak: peak, norm })
    }

    pub fn model(&self) -> &FactorCopulaModel {
        self.model
    }

    /// Posterior expectation E[g(V₀) | observed data].
    fn posterior_mean<G: Fn(f64) -> f64>(&self, g: G) -> Result<f64> {
        let factor = self.model.factor();
        if factor.is_degenerate() {
            return Ok(g(0.0));
        }
        let a = self.model.ones_quad();
        let m = self.b / a;
        let val = posterior_quadrature(factor, a, m, self.log_peak, self.window, g)?;
        Ok(val / self.norm)
    }

    /// Kriging geometry for one target site.
    pub fn target(&self, site: &[f64]) -> Result<ConditionalAtSite<'_, 'a>> {
        let locations = self.model.locations();
        for j in 0..locations.len() {
            let obs = locations.site(j);
            let mut d2 = 0.0;
            for (a, b) in obs.iter().zip(site) {
                d2 += (a - b) * (a - b);
            }
            if sqrt(d2) < 1e-9 {
                return Err(Error::InvalidParameter(format!(
                    "target site coincides with observed site {j}"
                )));
            }
        }
        let sigma0 = correlation_vector(self.model.corr(), locations, site)?;
        let k = self.model.sigma_z().solve(&sigma0)?;
        let tau2 = 1.0 - dot(&sigma0, &k);
        if !(tau2 > 1e-12) {
            return Err(Error::Domain(format!(
                "conditional variance degenerate at target ({tau2})"
            )));
        }
        Ok(ConditionalAtSite {
            request: self,
            kw: dot(&k, &self.z),
            k1: k.iter().sum(),
            tau: sqrt(tau2),
        })
    }
}

/// Conditional law of the uniform score at one target site.
pub struct ConditionalAtSite<'r, 'a> {
    request: &'r PredictionRequest<'a>,
    kw: f64,
    k1: f64,
    tau: f64,
}

impl ConditionalAtSite<'_, '_> {
    /// Conditional mean of W₀ given V₀ = v (affine in v).
    #[inline]
    fn mu(&self, v: f64) -> f64 {
        self.kw + v * (1.0 - self.k1)
    }

    /// Ĉ(u₀ | u₁,…,u_n): conditional CDF on the uniform scale.
    pub fn cdf(&self, u0: f64) -> Result<f64> {
        if !(u0 > 0.0 && u0 < 1.0) {
            return Err(Error::BoundaryUniform(u0));
        }
        let w0 = self.request.model.marginal().quantile(u0)?;
        let c = self
            .request
            .posterior_mean(|v| normal::cdf((w0 - self.mu(v)) / self.tau))?;
        Ok(c.clamp(0.0, 1.0))
    }

    /// Conditional density on the uniform scale (integrates to one).
    pub fn density(&self, u0: f64) -> Result<f64> {
        if !(u0 > 0.0 && u0 < 1.0) {
            return Err(Error::BoundaryUniform(u0));
        }
        let marginal = self.request.model.marginal();
        let w0 = marginal.quantile(u0)?;
        let f = self
            .request
            .posterior_mean(|v| normal::pdf((w0 - self.mu(v)) / self.tau) / self.tau)?;
        let denom = marginal.pdf(w0);
        if !(denom > 0.0) {
            return Ok(0.0);
        }
        Ok(f / denom)
    }

    /// Conditional quantile (Ĉ)⁻¹(p), nondecreasing in p.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Domain(format!("conditional quantile needs p in (0,1), got {p}")));
        }
        invert_monotone_cdf(
            |u| if u <= 0.0 || u >= 1.0 { u } else { self.cdf(u).unwrap_or(f64::NAN) },
            p,
            (1e-9, 1.0 - 1e-9),
            1e-8,
        )
    }

    /// Conditional mean m̂₁ = ∫ u₀ dĈ(u₀), computed as the posterior mean of
    /// E[F₁(μ(v) + τS)] with S standard normal.
    pub fn mean(&self) -> Result<f64> {
        let marginal = self.request.model.marginal();
        let tau = self.tau;
        let m = self.request.posterior_mean(|v| {
            let mu = self.mu(v);
            integrate(
                |s: f64| marginal.cdf(mu + tau * s) * normal::pdf(s),
                Support::Finite(-8.5, 8.5),
                &INNER_CFG,
            )
            .unwrap_or(f64::NAN)
        })?;
        if !m.is_finite() {
            return Err(Error::Domain("conditional mean quadrature failed".into()));
        }
        Ok(m.clamp(0.0, 1.0))
    }
}

/// ∫ g(v) exp(log_kernel(v) − peak) dv over the posterior window, split at
/// density kinks.
fn posterior_quadrature<G: Fn(f64) -> f64>(
    factor: &crate::factor::FactorDist,
    a: f64,
    m: f64,
    peak: f64,
    window: (f64, f64),
    g: G,
) -> Result<f64> {
    let (lo, hi) = window;
    let mut edges = alloc::vec![lo, hi];
    for k in factor.density_kinks() {
        if k > lo && k < hi {
            edges.push(k);
        }
    }
    if m > lo && m < hi {
        edges.push(m);
    }
    edges.sort_by(|x, y| x.partial_cmp(y).unwrap());
    edges.dedup();

    let integrand = |v: f64| {
        let lk = -0.5 * a * (v - m) * (v - m) + ln(factor.pdf(v));
        if lk.is_finite() {
            exp(lk - peak) * g(v)
        } else if lk == f64::NEG_INFINITY {
            0.0
        } else {
            1e150
        }
    };
    let mut total = 0.0;
    for pair in edges.windows(2) {
        total += match integrate(&integrand, Support::Finite(pair[0], pair[1]), &POSTERIOR_CFG) {
            Ok(v) => v,
            Err(Error::QuadratureNonConvergence { estimate, .. }) => estimate,
            Err(e) => return Err(e),
        };
    }
    Ok(total)
}

/// Per-site prediction output.
#[derive(Debug, Clone)]
pub struct SitePrediction {
    pub site: Vec<f64>,
    /// One value per requested quantile level, back-transformed.
    pub quantiles: Vec<f64>,
    pub mean: f64,
}

#[derive(Debug)]
pub struct PredictionSurface {
    pub levels: Vec<f64>,
    pub sites: Vec<SitePrediction>,
    /// (target index, error) for sites that failed; successes keep going.
    pub failures: Vec<(usize, Error)>,
}

/// Predict requested quantiles and the conditional mean at every target
/// site; sites are independent work items and per-site failures are
/// collected rather than aborting the surface.
pub fn predict_grid(
    request: &PredictionRequest<'_>,
    targets: &LocationSet,
    levels: &[f64],
    back: &BackTransform,
) -> Result<PredictionSurface> {
    for &p in levels {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Domain(format!("quantile level {p} outside (0,1)")));
        }
    }
    let mut sites = Vec::with_capacity(targets.len());
    let mut failures = Vec::new();
    for t in 0..targets.len() {
        let site = targets.site(t);
        let one = (|| -> Result<SitePrediction> {
            let cond = request.target(site)?;
            let mut qs = Vec::with_capacity(levels.len());
            for &p in levels {
                qs.push(back.apply(cond.quantile(p)?)?);
            }
            let mean = back.apply(cond.mean()?)?;
            Ok(SitePrediction { site: site.to_vec(), quantiles: qs, mean })
        })();
        match one {
            Ok(p) => sites.push(p),
            Err(e) => failures.push((t, e)),
        }
    }
    Ok(PredictionSurface { levels: levels.to_vec(), sites, failures })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor::FactorSpec;
    use crate::numerics::linalg::Matrix;
    use crate::spatial::CorrelationModel;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn model(spec: FactorSpec) -> FactorCopulaModel {
        let corr = CorrelationModel::powered_exponential(1.0, 1.2).unwrap();
        let sites = alloc::vec![
            alloc::vec![0.0, 0.0],
            alloc::vec![0.6, 0.1],
            alloc::vec![0.2, 0.8],
            alloc::vec![0.9, 0.9],
        ];
        FactorCopulaModel::new(corr, spec, LocationSet::new(sites).unwrap()).unwrap()
    }

    /// Reference Gaussian kriging with its own dense solver.
    fn gaussian_kriging(model: &FactorCopulaModel, z: &[f64], site: &[f64]) -> (f64, f64) {
        let n = model.n();
        let mut aug = Matrix::zeros(n, n + 2);
        for i in 0..n {
            for j in 0..n {
                aug[(i, j)] = model.sigma_z().entry(i, j);
            }
        }
        let s0 = correlation_vector(model.corr(), model.locations(), site).unwrap();
        for i in 0..n {
            aug[(i, n)] = s0[i];
            aug[(i, n + 1)] = z[i];
        }
        // Plain Gauss elimination with partial pivoting.
        for col in 0..n {
            let mut piv = col;
            for r in col + 1..n {
                if libm::fabs(aug[(r, col)]) > libm::fabs(aug[(piv, col)]) {
                    piv = r;
                }
            }
            for c in 0..n + 2 {
                let t = aug[(col, c)];
                aug[(col, c)] = aug[(piv, c)];
                aug[(piv, c)] = t;
            }
            for r in 0..n {
                if r != col {
                    let f = aug[(r, col)] / aug[(col, col)];
                    for c in col..n + 2 {
                        let v = aug[(col, c)] * f;
                        aug[(r, c)] -= v;
                    }
                }
            }
        }
        let mut kriging_mean = 0.0;
        let mut k_dot_s0 = 0.0;
        for i in 0..n {
            let ki = aug[(i, n)] / aug[(i, i)];
            kriging_mean += ki * z[i];
            k_dot_s0 += ki * s0[i];
        }
        (kriging_mean, 1.0 - k_dot_s0)
    }

    #[test]
    fn gaussian_baseline_matches_closed_form_conditional() {
        let m = model(FactorSpec::gaussian());
        let u = [0.3, 0.7, 0.55, 0.2];
        let req = PredictionRequest::new(&m, &u).unwrap();
        let site = [0.4, 0.4];
        let cond = req.target(&site).unwrap();

        let z = m.quantile_transform(&u).unwrap();
        let (mu, tau2) = gaussian_kriging(&m, &z, &site);
        for &u0 in &[0.05, 0.3, 0.5, 0.8, 0.99] {
            let expect = normal::cdf((normal::quantile(u0).unwrap() - mu) / sqrt(tau2));
            assert_abs_diff_eq!(cond.cdf(u0).unwrap(), expect, epsilon = 1e-6);
        }

        // Median back-transformed equals the kriging mean.
        let med = cond.quantile(0.5).unwrap();
        assert_abs_diff_eq!(normal::quantile(med).unwrap(), mu, epsilon = 1e-5);

        // Conditional mean against the exact Gaussian identity
        // E[Φ(X)] = Φ(μ/√(1+τ²)) for X ~ N(μ, τ²).
        let mean = cond.mean().unwrap();
        assert_abs_diff_eq!(mean, normal::cdf(mu / sqrt(1.0 + tau2)), epsilon = 1e-5);
    }

    #[test]
    fn cdf_limits_and_monotonicity() {
        let m = model(FactorSpec::exponential_difference(1.7, 3.0));
        let u = [0.3, 0.7, 0.55, 0.2];
        let req = PredictionRequest::new(&m, &u).unwrap();
        let cond = req.target(&[0.5, 0.5]).unwrap();

        assert!(cond.cdf(1.0 - 1e-7).unwrap() > 1.0 - 1e-6);
        assert!(cond.cdf(1e-7).unwrap() < 1e-6);
        let mut prev = 0.0;
        for i in 1..20 {
            let c = cond.cdf(i as f64 / 20.0).unwrap();
            assert!(c >= prev);
            prev = c;
        }

        // Quantiles are monotone in p.
        let q05 = cond.quantile(0.05).unwrap();
        let q50 = cond.quantile(0.5).unwrap();
        let q95 = cond.quantile(0.95).unwrap();
        assert!(q05 < q50 && q50 < q95);
    }

    #[test]
    fn far_site_approaches_unconditional_uniform() {
        // Correlation ~ 0 and a degenerate factor: conditional == marginal.
        let corr = CorrelationModel::powered_exponential(1.0, 1.2).unwrap();
        let sites = alloc::vec![alloc::vec![0.0, 0.0], alloc::vec![0.5, 0.0]];
        let m = FactorCopulaModel::new(corr, FactorSpec::gaussian(), LocationSet::new(sites).unwrap())
            .unwrap();
        let req = PredictionRequest::new(&m, &[0.9, 0.8]).unwrap();
        let cond = req.target(&[60.0, 0.0]).unwrap();
        for &u0 in &[0.1, 0.5, 0.9] {
            assert_abs_diff_eq!(cond.cdf(u0).unwrap(), u0, epsilon = 1e-3);
        }
        assert_abs_diff_eq!(cond.mean().unwrap(), 0.5, epsilon = 1e-3);
    }

    #[test]
    fn symmetric_model_with_median_data_predicts_half() {
        let corr = CorrelationModel::powered_exponential(1.0, 1.2).unwrap();
        let grid = LocationSet::unit_square_grid(2).unwrap();
        let m = FactorCopulaModel::new(
            corr,
            FactorSpec::exponential_difference(2.0, 2.0),
            grid,
        )
        .unwrap();
        let req = PredictionRequest::new(&m, &[0.5, 0.5, 0.5, 0.5]).unwrap();
        let surface = predict_grid(
            &req,
            &LocationSet::new(alloc::vec![
                alloc::vec![0.5, 0.5],
                alloc::vec![0.25, 0.75],
            ])
            .unwrap(),
            &[0.5],
            &BackTransform::Uniform,
        )
        .unwrap();
        assert!(surface.failures.is_empty());
        for site in &surface.sites {
            assert_abs_diff_eq!(site.quantiles[0], 0.5, epsilon = 1e-4);
        }
    }

    #[test]
    fn conditional_density_integrates_to_one() {
        let m = model(FactorSpec::exponential_difference(1.7, 3.0));
        let u = [0.4, 0.75, 0.3, 0.6];
        let req = PredictionRequest::new(&m, &u).unwrap();
        let cond = req.target(&[0.45, 0.55]).unwrap();
        // Integrate on the W scale: c(F₁(w)) f₁(w) dw.
        let marginal = m.marginal();
        let cfg = QuadratureConfig { abs_tol: 1e-9, rel_tol: 1e-7, max_subdivisions: 250 };
        let mass = integrate(
            |w: f64| {
                let u0 = marginal.cdf(w).clamp(1e-14, 1.0 - 1e-14);
                cond.density(u0).unwrap_or(0.0) * marginal.pdf(w)
            },
            Support::Finite(-9.0, 12.0),
            &cfg,
        )
        .unwrap();
        assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-5);
    }

    #[test]
    fn observed_site_permutation_leaves_prediction_unchanged() {
        let corr = CorrelationModel::powered_exponential(1.0, 1.2).unwrap();
        let sites = alloc::vec![
            alloc::vec![0.0, 0.0],
            alloc::vec![0.6, 0.1],
            alloc::vec![0.2, 0.8],
        ];
        let u = [0.3, 0.7, 0.55];
        let spec = FactorSpec::exponential_difference(1.7, 3.0);
        let m1 = FactorCopulaModel::new(corr, spec, LocationSet::new(sites.clone()).unwrap())
            .unwrap();
        let r1 = PredictionRequest::new(&m1, &u).unwrap();
        let c1 = r1.target(&[0.5, 0.5]).unwrap();

        let perm = [2usize, 0, 1];
        let p_sites: Vec<Vec<f64>> = perm.iter().map(|&i| sites[i].clone()).collect();
        let p_u: Vec<f64> = perm.iter().map(|&i| u[i]).collect();
        let m2 = FactorCopulaModel::new(corr, spec, LocationSet::new(p_sites).unwrap()).unwrap();
        let r2 = PredictionRequest::new(&m2, &p_u).unwrap();
        let c2 = r2.target(&[0.5, 0.5]).unwrap();

        for &u0 in &[0.2, 0.5, 0.9] {
            assert_relative_eq!(
                c1.cdf(u0).unwrap(),
                c2.cdf(u0).unwrap(),
                max_relative = 1e-10,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn coincident_target_rejected_and_reported() {
        let m = model(FactorSpec::gaussian());
        let req = PredictionRequest::new(&m, &[0.3, 0.7, 0.55, 0.2]).unwrap();
        assert!(req.target(&[0.0, 0.0]).is_err());

        let targets = LocationSet::new(alloc::vec![
            alloc::vec![0.0, 0.0],
            alloc::vec![0.5, 0.5],
        ])
        .unwrap();
        let surface =
            predict_grid(&req, &targets, &[0.5], &BackTransform::Uniform).unwrap();
        assert_eq!(surface.failures.len(), 1);
        assert_eq!(surface.failures[0].0, 0);
        assert_eq!(surface.sites.len(), 1);
    }

    #[test]
    fn quantile_bands_are_ordered_everywhere() {
        let m = model(FactorSpec::exponential_difference(1.7, 3.0));
        let req = PredictionRequest::new(&m, &[0.3, 0.7, 0.55, 0.2]).unwrap();
        let targets = LocationSet::unit_square_grid(3).unwrap();
        // Grid nodes coinciding with observed sites fail; others succeed.
        let surface =
            predict_grid(&req, &targets, &[0.05, 0.5, 0.95], &BackTransform::NormalScores)
                .unwrap();
        assert!(!surface.sites.is_empty());
        for s in &surface.sites {
            assert!(s.quantiles[0] <= s.quantiles[1] && s.quantiles[1] <= s.quantiles[2]);
        }
    }
}
