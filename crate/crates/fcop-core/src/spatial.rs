//! Locations, distances and spatial correlation models.
//!
//! `Σ_Z` is the correlation matrix of the Gaussian component at a finite set
//! of sites; `Σ_W = (Σ_Z + σ₀²)/(1 + σ₀²)` is the correlation matrix of the
//! observed field once the common factor (variance σ₀²) is added.

use crate::error::{Error, Result};
use crate::numerics::linalg::{Matrix, SpdMatrix};
use crate::numerics::math::{cos, cosh, exp, fabs, ln, ln_gamma, pow, sqrt};
use crate::numerics::quad::{integrate, QuadratureConfig, Support};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

/// Sites s₁…s_n in ℝ^d. No two sites may coincide exactly.
#[derive(Debug, Clone)]
pub struct LocationSet {
    dimension: usize,
    sites: Vec<Vec<f64>>,
    labels: Option<Vec<String>>,
}

impl LocationSet {
    pub fn new(sites: Vec<Vec<f64>>) -> Result<Self> {
        Self::with_labels(sites, None)
    }

    pub fn with_labels(sites: Vec<Vec<f64>>, labels: Option<Vec<String>>) -> Result<Self> {
        let Some(first) = sites.first() else {
            return Err(Error::InvalidParameter("location set needs at least one site".into()));
        };
        let d = first.len();
        if d == 0 {
            return Err(Error::InvalidParameter("site dimension must be >= 1".into()));
        }
        for (i, s) in sites.iter().enumerate() {
            if s.len() != d {
                return Err(Error::DimensionMismatch(format!(
                    "site {i} has dimension {}, expected {d}",
                    s.len()
                )));
            }
            if s.iter().any(|c| !c.is_finite()) {
                return Err(Error::NonFinite(format!("coordinate of site {i}")));
            }
        }
        for i in 0..sites.len() {
            for j in 0..i {
                if sites[i] == sites[j] {
                    return Err(Error::InvalidParameter(format!(
                        "sites {j} and {i} coincide exactly"
                    )));
                }
            }
        }
        if let Some(ref l) = labels {
            if l.len() != sites.len() {
                return Err(Error::DimensionMismatch("one label per site required".into()));
            }
        }
        Ok(Self { dimension: d, sites, labels })
    }

    /// k×k uniform grid on [0,1]×[0,1] (the simulation-study layout).
    pub fn unit_square_grid(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidParameter("grid size must be >= 1".into()));
        }
        let mut sites = Vec::with_capacity(k * k);
        if k == 1 {
            sites.push(alloc::vec![0.5, 0.5]);
        } else {
            let step = 1.0 / (k as f64 - 1.0);
            for i in 0..k {
                for j in 0..k {
                    sites.push(alloc::vec![i as f64 * step, j as f64 * step]);
                }
            }
        }
        Self::new(sites)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.sites.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    #[inline]
    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn site(&self, i: usize) -> &[f64] {
        &self.sites[i]
    }

    pub fn sites(&self) -> &[Vec<f64>] {
        &self.sites
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        euclidean(&self.sites[i], &self.sites[j])
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    sqrt(acc)
}

/// Symmetric matrix of pairwise Euclidean distances (zero diagonal).
pub fn distance_matrix(locations: &LocationSet) -> Matrix {
    let n = locations.len();
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..i {
            let d = locations.distance(i, j);
            m[(i, j)] = d;
            m[(j, i)] = d;
        }
    }
    m
}

/// Parametric isotropic correlation families.
///
/// The Matérn family uses the (range, smoothness) form
/// ρ(h) = 2^{1−ν}/Γ(ν) · (h/r)^ν · K_ν(h/r), which reduces to the
/// exponential model exp(−h/r) exactly at ν = 1/2.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "family", rename_all = "snake_case", deny_unknown_fields))]
pub enum CorrelationModel {
    /// ρ(h) = exp(−θ_Z h^α), θ_Z > 0, 0 < α ≤ 2.
    PoweredExponential { theta: f64, alpha: f64 },
    /// Matérn with range r > 0 and smoothness ν > 0.
    Matern { range: f64, smoothness: f64 },
    /// ρ(h) = cos(h)·exp(−λh), λ > 0. Can go negative; PD depends on layout.
    DampedCosine { lambda: f64 },
}

impl CorrelationModel {
    pub fn powered_exponential(theta: f64, alpha: f64) -> Result<Self> {
        let m = Self::PoweredExponential { theta, alpha };
        m.validate()?;
        Ok(m)
    }

    pub fn matern(range: f64, smoothness: f64) -> Result<Self> {
        let m = Self::Matern { range, smoothness };
        m.validate()?;
        Ok(m)
    }

    pub fn damped_cosine(lambda: f64) -> Result<Self> {
        let m = Self::DampedCosine { lambda };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::PoweredExponential { theta, alpha } => {
                if !(theta > 0.0 && theta.is_finite()) {
                    return Err(Error::InvalidParameter(format!(
                        "powered-exponential needs theta > 0, got {theta}"
                    )));
                }
                if !(alpha > 0.0 && alpha <= 2.0) {
                    return Err(Error::InvalidParameter(format!(
                        "powered-exponential needs alpha in (0,2], got {alpha}"
                    )));
                }
            }
            Self::Matern { range, smoothness } => {
                if !(range > 0.0 && range.is_finite())
                    || !(smoothness > 0.0 && smoothness.is_finite())
                {
                    return Err(Error::InvalidParameter(format!(
                        "Matérn needs range > 0 and smoothness > 0, got ({range}, {smoothness})"
                    )));
                }
            }
            Self::DampedCosine { lambda } => {
                if !(lambda > 0.0 && lambda.is_finite()) {
                    return Err(Error::InvalidParameter(format!(
                        "damped cosine needs lambda > 0, got {lambda}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// ρ(h) for h ≥ 0; every family has ρ(0) = 1.
    pub fn correlation(&self, h: f64) -> f64 {
        debug_assert!(h >= 0.0);
        if h == 0.0 {
            return 1.0;
        }
        match *self {
            Self::PoweredExponential { theta, alpha } => exp(-theta * pow(h, alpha)),
            Self::Matern { range, smoothness } => matern_correlation(h / range, smoothness),
            Self::DampedCosine { lambda } => cos(h) * exp(-lambda * h),
        }
    }

    /// Free parameters in a fixed order (used by the fitting layer).
    pub fn params(&self) -> Vec<f64> {
        match *self {
            Self::PoweredExponential { theta, alpha } => alloc::vec![theta, alpha],
            Self::Matern { range, smoothness } => alloc::vec![range, smoothness],
            Self::DampedCosine { lambda } => alloc::vec![lambda],
        }
    }

    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            Self::PoweredExponential { .. } => &["theta_z", "alpha"],
            Self::Matern { .. } => &["range", "smoothness"],
            Self::DampedCosine { .. } => &["lambda"],
        }
    }

    pub fn with_params(&self, p: &[f64]) -> Result<Self> {
        let expected = self.params().len();
        if p.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "correlation family expects {expected} parameters, got {}",
                p.len()
            )));
        }
        let m = match self {
            Self::PoweredExponential { .. } => {
                Self::PoweredExponential { theta: p[0], alpha: p[1] }
            }
            Self::Matern { .. } => Self::Matern { range: p[0], smoothness: p[1] },
            Self::DampedCosine { .. } => Self::DampedCosine { lambda: p[0] },
        };
        m.validate()?;
        Ok(m)
    }

    /// ∂ρ(h)/∂parameter for each free parameter, in [`Self::params`] order.
    pub fn correlation_gradient(&self, h: f64) -> Vec<f64> {
        if h == 0.0 {
            return alloc::vec![0.0; self.params().len()];
        }
        match *self {
            Self::PoweredExponential { theta, alpha } => {
                let ha = pow(h, alpha);
                let rho = exp(-theta * ha);
                alloc::vec![-ha * rho, -theta * ha * ln(h) * rho]
            }
            Self::Matern { range, smoothness } => {
                // The Bessel-order derivative has no convenient closed form;
                // the fitted surface is smooth, so central differences do.
                let eps_r = 1e-6 * range;
                let eps_s = 1e-6 * smoothness;
                let dr = (matern_correlation(h / (range + eps_r), smoothness)
                    - matern_correlation(h / (range - eps_r), smoothness))
                    / (2.0 * eps_r);
                let ds = (matern_correlation(h / range, smoothness + eps_s)
                    - matern_correlation(h / range, smoothness - eps_s))
                    / (2.0 * eps_s);
                alloc::vec![dr, ds]
            }
            Self::DampedCosine { lambda } => alloc::vec![-h * cos(h) * exp(-lambda * h)],
        }
    }
}

/// Matérn kernel 2^{1−ν}/Γ(ν) x^ν K_ν(x) evaluated in log space.
fn matern_correlation(x: f64, nu: f64) -> f64 {
    if x == 0.0 {
        return 1.0;
    }
    if nu == 0.5 {
        return exp(-x);
    }
    if nu == 1.5 {
        return (1.0 + x) * exp(-x);
    }
    if nu == 2.5 {
        return (1.0 + x + x * x / 3.0) * exp(-x);
    }
    let ln_k = ln_bessel_k(nu, x);
    let ln_rho = (1.0 - nu) * ln(2.0) - ln_gamma(nu) + nu * ln(x) + ln_k;
    exp(ln_rho).clamp(0.0, 1.0)
}

/// ln K_ν(x) through K_ν(x) = ∫₀^∞ exp(−x cosh t) cosh(νt) dt, integrated in
/// scaled form so small x / large ν cannot overflow.
fn ln_bessel_k(nu: f64, x: f64) -> f64 {
    let g = |t: f64| -x * cosh(t) + ln_cosh(nu * t);

    // The integrand peaks near t = ln(2ν/x) when x << ν, at 0 otherwise.
    let mut t_peak = 0.0;
    let mut g_peak = g(0.0);
    let coarse_hi = if x < 2.0 * nu { ln(2.0 * nu / x) + 2.0 } else { 2.0 };
    let steps = 200;
    for i in 0..=steps {
        let t = coarse_hi * i as f64 / steps as f64;
        let v = g(t);
        if v > g_peak {
            g_peak = v;
            t_peak = t;
        }
    }
    let mut t_hi = if t_peak > 1.0 { t_peak } else { 1.0 };
    while g(t_hi) > g_peak - 80.0 && t_hi < 800.0 {
        t_hi += 1.0;
    }

    let cfg = QuadratureConfig { abs_tol: 1e-14, rel_tol: 1e-12, max_subdivisions: 400 };
    let integral = integrate(|t| exp(g(t) - g_peak), Support::Finite(0.0, t_hi), &cfg)
        .unwrap_or_else(|e| match e {
            Error::QuadratureNonConvergence { estimate, .. } => estimate,
            _ => f64::NAN,
        });
    g_peak + ln(integral)
}

#[inline]
fn ln_cosh(t: f64) -> f64 {
    let a = fabs(t);
    // ln cosh t = |t| + ln(1 + e^{−2|t|}) − ln 2
    a + crate::numerics::math::log1p(exp(-2.0 * a)) - core::f64::consts::LN_2
}

/// Σ_Z: unit diagonal, entries ρ(‖s_i − s_j‖). Positive definiteness is
/// certified by the Cholesky factorization; failures surface as errors and
/// are never repaired with a nugget, which would silently change the copula.
pub fn build_sigma_z(model: &CorrelationModel, locations: &LocationSet) -> Result<SpdMatrix> {
    model.validate()?;
    let n = locations.len();
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = 1.0;
        for j in 0..i {
            let rho = model.correlation(locations.distance(i, j));
            m[(i, j)] = rho;
            m[(j, i)] = rho;
        }
    }
    SpdMatrix::cholesky(m)
}

/// Σ_W = (Σ_Z + σ₀²)/(1 + σ₀²) entrywise, the correlation matrix of W.
pub fn sigma_w(sigma_z: &SpdMatrix, var_v0: f64) -> Result<SpdMatrix> {
    if !(var_v0 >= 0.0 && var_v0.is_finite()) {
        return Err(Error::UnsupportedVariance(format!(
            "sigma_w needs a finite factor variance, got {var_v0}"
        )));
    }
    let n = sigma_z.order();
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = (sigma_z.entry(i, j) + var_v0) / (1.0 + var_v0);
        }
    }
    SpdMatrix::cholesky(m)
}

/// Correlation vector between one target site and each site of `locations`.
pub fn correlation_vector(
    model: &CorrelationModel,
    locations: &LocationSet,
    target: &[f64],
) -> Result<Vec<f64>> {
    if target.len() != locations.dimension() {
        return Err(Error::DimensionMismatch(format!(
            "target site has dimension {}, locations have {}",
            target.len(),
            locations.dimension()
        )));
    }
    Ok((0..locations.len())
        .map(|j| model.correlation(euclidean(locations.site(j), target)))
        .collect())
}
