//! Joint density, copula density and replicated log-likelihood of W.
//!
//! The joint density is a one-dimensional integral of the Gaussian density
//! against the factor law,
//!
//! ```text
//! f_n(w) = ∫ φ_Σ(w − v·1) dF_V(v),
//! ```
//!
//! evaluated after completing the square: with a = 1ᵀΣ⁻¹1, b = 1ᵀΣ⁻¹w and
//! c = wᵀΣ⁻¹w the Gaussian part of the integrand is
//! exp{−(a v² − 2bv + c)/2}, a scalar Gaussian kernel in v. For exponential
//! factors the integral has a closed form (each exponential branch
//! contributes an exp·Φ term), which the likelihood uses automatically;
//! the quadrature path stays available as an independent oracle.

pub mod bivariate;
pub(crate) mod closed;

pub use bivariate::BivariateModel;

use crate::error::{Error, Result};
use crate::factor::{ClosedFactorForm, FactorDist, FactorSpec, MarginalW};
use crate::numerics::linalg::{dot, Matrix, SpdMatrix};
use crate::numerics::math::{exp, ln, sqrt, CompensatedSum};
use crate::numerics::quad::{integrate, QuadratureConfig, Support};
use crate::spatial::{build_sigma_z, CorrelationModel, LocationSet};
use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// A factor copula bound to a set of locations, with the Gaussian
/// correlation structure factored once at construction.
///
/// The copula parameters split into θ_Σ (correlation family) and θ_F
/// (factor family); the marginal F₁ of W is carried alongside because every
/// copula evaluation needs its quantile and density.
#[derive(Debug)]
pub struct FactorCopulaModel {
    corr: CorrelationModel,
    locations: LocationSet,
    factor: Arc<FactorDist>,
    marginal: Arc<MarginalW>,
    sigma_z: SpdMatrix,
    /// Σ⁻¹ 1.
    sigma_inv_one: Vec<f64>,
    /// a = 1ᵀ Σ⁻¹ 1.
    ones_quad: f64,
    logdet: f64,
}

impl FactorCopulaModel {
    pub fn new(
        corr: CorrelationModel,
        factor_spec: FactorSpec,
        locations: LocationSet,
    ) -> Result<Self> {
        let factor = Arc::new(FactorDist::new(factor_spec)?);
        let marginal = Arc::new(MarginalW::new(Arc::clone(&factor))?);
        Self::with_parts(corr, factor, marginal, locations)
    }

    /// Assemble from an already-evaluated factor/marginal pair. Spline
    /// caches are expensive for heavy-tailed factors; fitting loops reuse
    /// them whenever only the correlation parameters move.
    pub fn with_parts(
        corr: CorrelationModel,
        factor: Arc<FactorDist>,
        marginal: Arc<MarginalW>,
        locations: LocationSet,
    ) -> Result<Self> {
        let sigma_z = build_sigma_z(&corr, &locations)?;
        let n = sigma_z.order();
        let ones = alloc::vec![1.0; n];
        let sigma_inv_one = sigma_z.solve(&ones)?;
        let ones_quad = sigma_inv_one.iter().sum();
        let logdet = sigma_z.logdet();
        Ok(Self { corr, locations, factor, marginal, sigma_z, sigma_inv_one, ones_quad, logdet })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.sigma_z.order()
    }

    pub fn corr(&self) -> &CorrelationModel {
        &self.corr
    }

    pub fn locations(&self) -> &LocationSet {
        &self.locations
    }

    pub fn factor(&self) -> &Arc<FactorDist> {
        &self.factor
    }

    pub fn marginal(&self) -> &Arc<MarginalW> {
        &self.marginal
    }

    pub fn sigma_z(&self) -> &SpdMatrix {
        &self.sigma_z
    }

    pub(crate) fn sigma_inv_one(&self) -> &[f64] {
        &self.sigma_inv_one
    }

    pub(crate) fn ones_quad(&self) -> f64 {
        self.ones_quad
    }

    pub(crate) fn logdet(&self) -> f64 {
        self.logdet
    }

    /// The bivariate restriction to a pair of sites.
    pub fn pair(&self, j1: usize, j2: usize) -> Result<BivariateModel> {
        let n = self.n();
        if j1 >= n || j2 >= n || j1 == j2 {
            return Err(Error::Domain(format!("invalid site pair ({j1}, {j2}) for n = {n}")));
        }
        BivariateModel::from_parts(
            self.sigma_z.entry(j1, j2),
            Arc::clone(&self.factor),
            Arc::clone(&self.marginal),
        )
    }

    /// Completed-square statistics (a, b, c) for one observation vector.
    fn square_stats(&self, w: &[f64]) -> Result<(f64, f64, f64)> {
        if w.len() != self.n() {
            return Err(Error::DimensionMismatch(format!(
                "observation has length {}, model has {} sites",
                w.len(),
                self.n()
            )));
        }
        let y = self.sigma_z.solve_lower(w)?;
        let c = dot(&y, &y);
        let b = dot(&self.sigma_inv_one, w);
        Ok((self.ones_quad, b, c))
    }

    /// log f_n(w) via the closed form when the factor admits one, otherwise
    /// by adaptive quadrature.
    pub fn joint_log_density(&self, w: &[f64]) -> Result<f64> {
        match self.factor.closed_form() {
            Some(form) => self.joint_log_density_closed_form(&form, w),
            None => self.joint_log_density_quadrature(w),
        }
    }

    /// Joint density f_n(w) (dispatching like [`Self::joint_log_density`]).
    pub fn joint_density(&self, w: &[f64]) -> Result<f64> {
        Ok(exp(self.joint_log_density(w)?))
    }

    /// Closed-form joint density; errors when the factor has no closed form.
    pub fn joint_density_closed(&self, w: &[f64]) -> Result<f64> {
        let form = self.factor.closed_form().ok_or_else(|| {
            Error::WrongFactorFamily(format!("{:?}", self.factor.spec()))
        })?;
        Ok(exp(self.joint_log_density_closed_form(&form, w)?))
    }

    fn joint_log_density_closed_form(&self, form: &ClosedFactorForm, w: &[f64]) -> Result<f64> {
        let (a, b, c) = self.square_stats(w)?;
        Ok(closed::log_density(form, self.n(), self.logdet, a, b, c))
    }

    /// Quadrature evaluation of log f_n(w): the factor integral is computed
    /// in scaled form (peak factored out) so far-tail observations keep
    /// relative accuracy.
    pub fn joint_log_density_quadrature(&self, w: &[f64]) -> Result<f64> {
        let (a, b, c) = self.square_stats(w)?;
        let base = -0.5 * (self.n() as f64) * LN_2PI - 0.5 * self.logdet - 0.5 * (c - b * b / a);
        if self.factor.is_degenerate() {
            // Point mass at v = 0: the integral is the kernel at zero.
            return Ok(base - 0.5 * (a * (b / a) * (b / a)));
        }
        let ln_integral = log_factor_integral(&self.factor, a, b)?;
        Ok(base + ln_integral)
    }

    /// log copula density at a point already transformed to the W scale.
    pub fn copula_log_density_w(&self, z: &[f64]) -> Result<f64> {
        let joint = self.joint_log_density(z)?;
        let mut marg = 0.0;
        for &zj in z {
            marg += self.marginal.log_pdf(zj);
        }
        Ok(joint - marg)
    }

    /// Copula density c(u) of Eq-style form: quantile-transform the
    /// uniforms, then joint density over the product of marginal densities.
    pub fn copula_density(&self, u: &[f64]) -> Result<f64> {
        let z = self.quantile_transform(u)?;
        Ok(exp(self.copula_log_density_w(&z)?))
    }

    /// (F₁)⁻¹ applied elementwise; rejects boundary uniforms.
    pub fn quantile_transform(&self, u: &[f64]) -> Result<Vec<f64>> {
        u.iter()
            .map(|&ui| {
                if !(ui > 0.0 && ui < 1.0) {
                    return Err(Error::BoundaryUniform(ui));
                }
                self.marginal.quantile(ui)
            })
            .collect()
    }

    /// Replicated copula log-likelihood for an N×n matrix of W-scale data:
    /// Σᵢ log f_n(zᵢ) − Σᵢⱼ log f₁(zᵢⱼ). Summation is compensated so the
    /// reduction is deterministic for a fixed row order.
    pub fn log_likelihood_ws(&self, z: &Matrix) -> Result<f64> {
        if z.cols() != self.n() {
            return Err(Error::DimensionMismatch(format!(
                "data has {} columns, model has {} sites",
                z.cols(),
                self.n()
            )));
        }
        for row in 0..z.rows() {
            if z.row(row).iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("replicate {row}")));
            }
        }
        let mut acc = CompensatedSum::new();
        for row in 0..z.rows() {
            acc.add(self.copula_log_density_w(z.row(row))?);
        }
        Ok(acc.value())
    }
}

/// ln ∫ exp(−(a/2)(v − b/a)²) dF_V(v), by peak-scaled adaptive quadrature.
pub(crate) fn log_factor_integral(factor: &FactorDist, a: f64, b: f64) -> Result<f64> {
    let m = b / a;
    let sa = sqrt(a);
    // ±9.5 kernel standard deviations: truncation under 3e-21 relative.
    let half_width = 9.5 / sa;
    let (f_lo, f_hi) = factor.quantile_bounds(1e-18);

    // Clip the Gaussian window to the factor's effective support; when the
    // kernel center lies outside, keep the nearest stretch of support.
    let (lo, hi) = if m < f_lo {
        (f_lo, if f_hi < f_lo + 2.0 * half_width { f_hi } else { f_lo + 2.0 * half_width })
    } else if m > f_hi {
        (if f_lo > f_hi - 2.0 * half_width { f_lo } else { f_hi - 2.0 * half_width }, f_hi)
    } else {
        (
            if f_lo > m - half_width { f_lo } else { m - half_width },
            if f_hi < m + half_width { f_hi } else { m + half_width },
        )
    };
    if !(lo < hi) {
        return Ok(f64::NEG_INFINITY);
    }

    // Scan for the peak of the log-integrand (skipping kink points where the
    // density may spike to +inf; the cusp is integrable).
    let log_g = |v: f64| -0.5 * a * (v - m) * (v - m) + ln(factor.pdf(v));
    let mut peak = f64::NEG_INFINITY;
    let scan = 64;
    for i in 0..=scan {
        let v = lo + (hi - lo) * i as f64 / scan as f64;
        let g = log_g(v);
        if g.is_finite() && g > peak {
            peak = g;
        }
    }
    if !peak.is_finite() {
        return Ok(f64::NEG_INFINITY);
    }

    let mut edges: Vec<f64> = alloc::vec![lo, hi];
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

    // Closed-form factor densities are smooth and converge fast at a strict
    // tolerance (the quadrature path doubles as the 1e-9 oracle for the
    // closed form). Spline-backed densities are only piecewise smooth; the
    // error estimator would chase knot kinks far below their actual error.
    let cfg = if factor.closed_form().is_some() {
        QuadratureConfig { abs_tol: 1e-14, rel_tol: 1e-10, max_subdivisions: 250 }
    } else {
        QuadratureConfig { abs_tol: 1e-13, rel_tol: 2e-8, max_subdivisions: 120 }
    };
    let mut total = 0.0;
    for pair in edges.windows(2) {
        let f = |v: f64| {
            let g = log_g(v);
            if g.is_finite() {
                exp(g - peak)
            } else if g == f64::NEG_INFINITY {
                0.0
            } else {
                // +inf at an integrable cusp: adjacent nodes carry the mass.
                1e150
            }
        };
        total += match integrate(f, Support::Finite(pair[0], pair[1]), &cfg) {
            Ok(v) => v,
            Err(Error::QuadratureNonConvergence { estimate, .. }) => estimate,
            Err(e) => return Err(e),
        };
    }
    if !(total > 0.0) {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(peak + ln(total))
}

/// Guard used by tests and callers that need plain densities.
pub fn log_density_is_finite(x: f64) -> bool {
    x.is_finite() || x == f64::NEG_INFINITY
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor::OneSidedFactor;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid_model(k: usize, factor: FactorSpec) -> FactorCopulaModel {
        let corr = CorrelationModel::powered_exponential(1.2, 1.5).unwrap();
        let locations = LocationSet::unit_square_grid(k).unwrap();
        FactorCopulaModel::new(corr, factor, locations).unwrap()
    }

    #[test]
    fn degenerate_factor_reduces_to_gaussian_density() {
        let model = grid_model(2, FactorSpec::gaussian());
        let w = [0.3, -0.8, 1.1, 0.2];
        let got = model.joint_density(&w).unwrap();

        // φ_Σ(w) computed directly.
        let sz = model.sigma_z();
        let c = sz.inv_quad_form(&w).unwrap();
        let expect = exp(-0.5 * (4.0 * LN_2PI + sz.logdet() + c));
        assert_relative_eq!(got, expect, max_relative = 1e-12);
    }

    #[test]
    fn single_site_joint_equals_marginal_pdf() {
        let one = LocationSet::new(alloc::vec![alloc::vec![0.0, 0.0]]).unwrap();
        let corr = CorrelationModel::powered_exponential(1.0, 1.0).unwrap();
        let model = FactorCopulaModel::new(
            corr,
            FactorSpec::exponential_difference(1.7, 3.0),
            one,
        )
        .unwrap();
        for &w in &[-3.0, -0.4, 0.0, 1.3, 4.0] {
            // Quadrature path against the closed marginal density.
            let joint = exp(model.joint_log_density_quadrature(&[w]).unwrap());
            assert_abs_diff_eq!(joint, model.marginal().pdf(w), epsilon = 1e-9);
            // Closed path as well.
            let closed = model.joint_density_closed(&[w]).unwrap();
            assert_relative_eq!(closed, model.marginal().pdf(w), max_relative = 1e-10);
        }
    }

    #[test]
    fn closed_form_agrees_with_quadrature_on_random_configs() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..100 {
            let n_sites = 2 + (trial % 4);
            let sites: Vec<Vec<f64>> = (0..n_sites * n_sites)
                .map(|_| alloc::vec![rng.gen::<f64>(), rng.gen::<f64>()])
                .collect();
            let locations = match LocationSet::new(sites) {
                Ok(l) => l,
                Err(_) => continue,
            };
            let theta1 = 0.5 + 2.0 * rng.gen::<f64>();
            let theta2 = 0.5 + 2.0 * rng.gen::<f64>();
            let spec = if trial % 3 == 0 {
                FactorSpec::exponential(theta1)
            } else {
                FactorSpec::exponential_difference(theta1, theta2)
            };
            let corr = CorrelationModel::powered_exponential(
                0.4 + 1.6 * rng.gen::<f64>(),
                0.6 + 1.2 * rng.gen::<f64>(),
            )
            .unwrap();
            let model = FactorCopulaModel::new(corr, spec, locations).unwrap();
            let w: Vec<f64> = (0..model.n()).map(|_| 4.0 * rng.gen::<f64>() - 1.5).collect();
            let closed = model.joint_density_closed(&w).unwrap();
            let quad = exp(model.joint_log_density_quadrature(&w).unwrap());
            assert_relative_eq!(closed, quad, max_relative = 1e-9);
        }
    }

    #[test]
    fn symmetric_factor_density_reflection_invariant() {
        let model = grid_model(2, FactorSpec::exponential_difference(2.1, 2.1));
        let w = [0.7, -0.3, 1.4, 0.1];
        let neg: Vec<f64> = w.iter().map(|x| -x).collect();
        let a = model.joint_density_closed(&w).unwrap();
        let b = model.joint_density_closed(&neg).unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-10);
    }

    #[test]
    fn closed_form_rejected_for_wrong_family() {
        let spec = FactorSpec::OneSided { v1: OneSidedFactor::Pareto { theta: 0.8, beta: 3.0 } };
        let model = grid_model(2, spec);
        assert!(matches!(
            model.joint_density_closed(&[0.0, 0.0, 0.0, 0.0]),
            Err(Error::WrongFactorFamily(_))
        ));
    }

    #[test]
    fn copula_density_identity_cases() {
        // Independence copula: degenerate factor on an identity Σ_Z needs
        // distant sites; powered-exponential at distance 40 is effectively 0.
        let far = LocationSet::new(alloc::vec![alloc::vec![0.0, 0.0], alloc::vec![40.0, 0.0]])
            .unwrap();
        let corr = CorrelationModel::powered_exponential(1.2, 1.5).unwrap();
        let model = FactorCopulaModel::new(corr, FactorSpec::gaussian(), far).unwrap();
        for &(u1, u2) in &[(0.2, 0.7), (0.5, 0.5), (0.9, 0.05)] {
            assert_abs_diff_eq!(model.copula_density(&[u1, u2]).unwrap(), 1.0, epsilon = 1e-9);
        }

        // A single site always has copula density 1.
        let one = LocationSet::new(alloc::vec![alloc::vec![0.3]]).unwrap();
        let corr = CorrelationModel::powered_exponential(1.0, 1.0).unwrap();
        let model =
            FactorCopulaModel::new(corr, FactorSpec::exponential_difference(1.7, 3.0), one)
                .unwrap();
        for &u in &[0.1, 0.5, 0.93] {
            assert_relative_eq!(model.copula_density(&[u]).unwrap(), 1.0, max_relative = 1e-9);
        }
    }

    #[test]
    fn copula_density_rejects_boundary_uniforms() {
        let model = grid_model(2, FactorSpec::gaussian());
        assert!(matches!(
            model.copula_density(&[0.0, 0.5, 0.5, 0.5]),
            Err(Error::BoundaryUniform(_))
        ));
        assert!(matches!(
            model.copula_density(&[0.2, 1.0, 0.5, 0.5]),
            Err(Error::BoundaryUniform(_))
        ));
    }

    #[test]
    fn bivariate_copula_density_normalizes() {
        // ∫∫ c(u₁,u₂) du = 1, integrated on the W scale where the integrand
        // is smooth: c(F(w₁),F(w₂)) f(w₁) f(w₂).
        let two = LocationSet::new(alloc::vec![alloc::vec![0.0], alloc::vec![0.9]]).unwrap();
        let corr = CorrelationModel::powered_exponential(1.0, 1.0).unwrap();
        let model =
            FactorCopulaModel::new(corr, FactorSpec::exponential_difference(1.7, 3.0), two)
                .unwrap();
        let cfg = QuadratureConfig { abs_tol: 1e-9, rel_tol: 1e-7, max_subdivisions: 200 };
        let m = model.marginal();
        let inner = |w1: f64| {
            integrate(
                |w2: f64| {
                    exp(model.copula_log_density_w(&[w1, w2]).unwrap())
                        * m.pdf(w1)
                        * m.pdf(w2)
                },
                Support::Finite(-8.0, 10.0),
                &cfg,
            )
            .unwrap()
        };
        let mass = integrate(inner, Support::Finite(-8.0, 10.0), &cfg).unwrap();
        assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-5);
    }

    #[test]
    fn two_site_independent_joint_density_normalizes() {
        // n=2, ρ≈0: ∫∫ f₂ = 1 by iterated quadrature.
        let far = LocationSet::new(alloc::vec![alloc::vec![0.0, 0.0], alloc::vec![50.0, 0.0]])
            .unwrap();
        let corr = CorrelationModel::powered_exponential(1.2, 1.5).unwrap();
        let model =
            FactorCopulaModel::new(corr, FactorSpec::exponential_difference(1.7, 3.0), far)
                .unwrap();
        let cfg = QuadratureConfig { abs_tol: 1e-9, rel_tol: 1e-7, max_subdivisions: 200 };
        let inner = |w1: f64| {
            integrate(
                |w2: f64| model.joint_density(&[w1, w2]).unwrap(),
                Support::Finite(-9.0, 11.0),
                &cfg,
            )
            .unwrap()
        };
        let mass = integrate(inner, Support::Finite(-9.0, 11.0), &cfg).unwrap();
        assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn permutation_invariance_of_copula_density() {
        let sites = alloc::vec![
            alloc::vec![0.1, 0.2],
            alloc::vec![0.8, 0.4],
            alloc::vec![0.5, 0.9],
        ];
        let corr = CorrelationModel::powered_exponential(0.9, 1.3).unwrap();
        let spec = FactorSpec::exponential_difference(1.7, 3.0);
        let u = [0.2, 0.6, 0.85];

        let model = FactorCopulaModel::new(corr, spec, LocationSet::new(sites.clone()).unwrap())
            .unwrap();
        let base = model.copula_density(&u).unwrap();

        // Permute sites and uniforms jointly: the density must not move.
        let perm = [2usize, 0, 1];
        let p_sites: Vec<Vec<f64>> = perm.iter().map(|&i| sites[i].clone()).collect();
        let p_u: Vec<f64> = perm.iter().map(|&i| u[i]).collect();
        let p_model =
            FactorCopulaModel::new(corr, spec, LocationSet::new(p_sites).unwrap()).unwrap();
        assert_relative_eq!(p_model.copula_density(&p_u).unwrap(), base, max_relative = 1e-10);
    }

    #[test]
    fn log_likelihood_trivial_cases() {
        // N=1, n=1: the copula log-density of a single margin is 0.
        let one = LocationSet::new(alloc::vec![alloc::vec![0.0]]).unwrap();
        let corr = CorrelationModel::powered_exponential(1.0, 1.0).unwrap();
        let model =
            FactorCopulaModel::new(corr, FactorSpec::exponential_difference(1.7, 3.0), one)
                .unwrap();
        let z = Matrix::from_vec(1, 1, alloc::vec![0.734]).unwrap();
        assert_abs_diff_eq!(model.log_likelihood_ws(&z).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn log_likelihood_rejects_non_finite() {
        let model = grid_model(2, FactorSpec::gaussian());
        let z = Matrix::from_vec(1, 4, alloc::vec![0.1, f64::NAN, 0.3, 0.2]).unwrap();
        assert!(matches!(model.log_likelihood_ws(&z), Err(Error::NonFinite(_))));
    }

    #[test]
    fn gaussian_baseline_matches_direct_formula() {
        // Gaussian copula log-likelihood has the textbook closed form
        // Σᵢ [−½ log|Σ| − ½ zᵢᵀ(Σ⁻¹ − I)zᵢ].
        let model = grid_model(3, FactorSpec::gaussian());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = model.n();
        let rows = 20;
        let mut data = Vec::with_capacity(rows * n);
        for _ in 0..rows * n {
            data.push(rng.gen::<f64>() * 3.0 - 1.5);
        }
        let z = Matrix::from_vec(rows, n, data).unwrap();
        let got = model.log_likelihood_ws(&z).unwrap();

        let sz = model.sigma_z();
        let mut expect = 0.0;
        for i in 0..rows {
            let row = z.row(i);
            let quad = sz.inv_quad_form(row).unwrap();
            let self_quad: f64 = row.iter().map(|v| v * v).sum();
            expect += -0.5 * sz.logdet() - 0.5 * (quad - self_quad);
        }
        assert_relative_eq!(got, expect, max_relative = 1e-9);
    }

    #[test]
    fn closed_and_quadrature_likelihood_paths_agree() {
        let model = grid_model(3, FactorSpec::exponential_difference(1.2, 2.5));
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let w: Vec<f64> = (0..model.n()).map(|_| 5.0 * rng.gen::<f64>() - 2.0).collect();
            let closed = model.joint_log_density(&w).unwrap();
            let quad = model.joint_log_density_quadrature(&w).unwrap();
            assert_abs_diff_eq!(closed, quad, epsilon = 1e-8);
        }
    }
}
