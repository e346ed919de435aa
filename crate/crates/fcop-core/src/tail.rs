//! Tail-dependence analytics.
//!
//! Finite-level coefficients λ_L^q = C(q,q)/q and
//! λ_U^q = [2q − 1 + C(1−q,1−q)]/q are evaluated through single-integral
//! diagonal representations of the joint CDF/survival,
//!
//! ```text
//! F₂(z,z)  = 2 ∫ F_V(z−w)  φ(w) Φ(+c_ρ w) dw,
//! F̄₂(z,z) = 2 ∫ S_V(z−w) φ(w) Φ(−c_ρ w) dw,   c_ρ = √((1−ρ)/(1+ρ)),
//! ```
//!
//! which keep full relative accuracy arbitrarily deep in the tails (the
//! two-dimensional copula path loses the survival mass to cancellation long
//! before q reaches 1e−4). The limiting coefficients have closed forms by
//! the factor's tail order: an exponential-tailed factor (order α = 1 with
//! rate θ) gives λ = 2Φ(−θ√((1−ρ)/2)); subexponential tails give 1;
//! lighter-than-exponential tails give 0.

use crate::copula::BivariateModel;
use crate::error::{Error, Result};
use crate::numerics::linalg::Matrix;
use crate::numerics::math::{exp, fabs, ln, pow, sqrt};
use crate::numerics::normal;
use crate::numerics::quad::{integrate, QuadratureConfig, Support};
use alloc::format;
use alloc::vec::Vec;
use rand::Rng;

const TAIL_CFG: QuadratureConfig =
    QuadratureConfig { abs_tol: 1e-13, rel_tol: 1e-9, max_subdivisions: 300 };

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Tail {
    Lower,
    Upper,
}

/// Tail order of the factor's survival function
/// 1 − F(v) ~ K v^β exp(−θ v^α).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FactorTailOrder {
    /// 0 < α < 1 (or α = 0 with β < 0, i.e. power-law): perfect tail
    /// dependence, λ = 1.
    Subexponential,
    /// α = 1 with rate θ: λ = 2Φ(−θ√((1−ρ)/2)).
    Exponential,
    /// α > 1: tail independent, λ = 0.
    Superexponential,
}

/// Limiting tail-dependence coefficient from the factor tail order.
pub fn theoretical_lambda(theta: f64, rho: f64, order: FactorTailOrder) -> Result<f64> {
    if !(rho < 1.0) {
        return Err(Error::Domain(format!("theoretical lambda needs rho < 1, got {rho}")));
    }
    if !(theta > 0.0) {
        return Err(Error::InvalidParameter(format!("tail rate must be positive, got {theta}")));
    }
    Ok(match order {
        FactorTailOrder::Subexponential => 1.0,
        FactorTailOrder::Exponential => 2.0 * normal::cdf(-theta * sqrt((1.0 - rho) / 2.0)),
        FactorTailOrder::Superexponential => 0.0,
    })
}

/// Diagonal joint survival and marginal survival at level z, through the
/// single-integral representations (peak-scaled, so ratios stay accurate
/// far into the tail).
pub fn appendix_tail_integrals(pair: &BivariateModel, z: f64) -> Result<(f64, f64)> {
    let joint = diag_integral(pair, z, Tail::Upper, true)?;
    let marginal = diag_integral(pair, z, Tail::Upper, false)?;
    Ok((joint, marginal))
}

/// Diagonal joint CDF/survival F₂(z,z) or F̄₂(z,z) (and the one-dimensional
/// analogues when `joint` is false).
fn diag_integral(pair: &BivariateModel, z: f64, tail: Tail, joint: bool) -> Result<f64> {
    let rho = pair.rho();
    let c_rho = sqrt((1.0 - rho) / (1.0 + rho));
    let factor = pair.factor();

    let log_weight = |w: f64| -> f64 {
        let fv = match tail {
            Tail::Upper => factor.survival(z - w),
            Tail::Lower => factor.cdf(z - w),
        };
        let mut lg = ln(fv) + normal::log_pdf(w);
        if joint {
            let arg = match tail {
                Tail::Upper => -c_rho * w,
                Tail::Lower => c_rho * w,
            };
            lg += normal::log_cdf(arg);
        }
        lg
    };

    // φ(w) underflows past |w| ≈ 38, so the integrand lives in a fixed
    // window whatever z or the factor tails do.
    let w_lo = -42.0;
    let w_hi = 42.0;

    let mut peak = f64::NEG_INFINITY;
    let scan = 800;
    for i in 0..=scan {
        let w = w_lo + (w_hi - w_lo) * i as f64 / scan as f64;
        let lg = log_weight(w);
        if lg.is_finite() && lg > peak {
            peak = lg;
        }
    }
    if !peak.is_finite() {
        return Ok(0.0);
    }

    let mut edges = alloc::vec![w_lo, w_hi];
    for k in factor.density_kinks() {
        let w = z - k;
        if w > w_lo && w < w_hi {
            edges.push(w);
        }
    }
    edges.push(0.0);
    edges.sort_by(|a, b| a.partial_cmp(b).unwrap());
    edges.dedup();

    let mut total = 0.0;
    for pairw in edges.windows(2) {
        let f = |w: f64| {
            let lg = log_weight(w);
            if lg.is_finite() {
                exp(lg - peak)
            } else {
                0.0
            }
        };
        total += match integrate(f, Support::Finite(pairw[0], pairw[1]), &TAIL_CFG) {
            Ok(v) => v,
            Err(Error::QuadratureNonConvergence { estimate, .. }) => estimate,
            Err(e) => return Err(e),
        };
    }
    let scale = if joint { 2.0 } else { 1.0 };
    Ok(scale * exp(peak) * total)
}

/// Finite-level tail coefficient λ^q for 0 < q ≤ 0.5.
pub fn lambda_q(pair: &BivariateModel, q: f64, tail: Tail) -> Result<f64> {
    if !(q > 0.0 && q <= 0.5) {
        return Err(Error::Domain(format!("lambda_q needs q in (0, 0.5], got {q}")));
    }
    let marginal = pair.marginal();
    let value = match tail {
        Tail::Lower => {
            let z = marginal.quantile(q)?;
            diag_integral(pair, z, Tail::Lower, true)? / q
        }
        Tail::Upper => {
            let z = marginal.quantile(1.0 - q)?;
            diag_integral(pair, z, Tail::Upper, true)? / q
        }
    };
    Ok(value.clamp(0.0, 1.0))
}

/// Hüsler–Reiss stable tail dependence function
/// ℓ(x₁,x₂) = x₁Φ(λ/2 + log(x₁/x₂)/λ) + x₂Φ(λ/2 + log(x₂/x₁)/λ).
pub fn husler_reiss_ell(x1: f64, x2: f64, lambda: f64) -> Result<f64> {
    if !(x1 > 0.0 && x2 > 0.0 && lambda > 0.0) {
        return Err(Error::Domain(format!(
            "husler_reiss_ell needs positive arguments, got ({x1}, {x2}, {lambda})"
        )));
    }
    let r = ln(x1 / x2) / lambda;
    Ok(x1 * normal::cdf(lambda / 2.0 + r) + x2 * normal::cdf(lambda / 2.0 - r))
}

/// Empirical stable-tail approximation ℓ_q(x₁,x₂) = {1 − C(1−qx₁, 1−qx₂)}/q,
/// computed through the survival copula so the tail keeps precision.
pub fn empirical_ell_q(pair: &BivariateModel, x1: f64, x2: f64, q: f64) -> Result<f64> {
    if !(q > 0.0 && q * x1 < 1.0 && q * x2 < 1.0) {
        return Err(Error::Domain(format!("invalid (q, x1, x2) = ({q}, {x1}, {x2})")));
    }
    // 1 − C(1−a, 1−b) = a + b − C̄(1−a, 1−b)
    let a = q * x1;
    let b = q * x2;
    let surv = pair.survival(1.0 - a, 1.0 - b)?;
    Ok((a + b - surv) / q)
}

/// Monte-Carlo copula skewness ζ₁ = E(U₁ + U₂ − 1)³ with its standard error.
pub fn zeta1<R: Rng + ?Sized>(pair: &BivariateModel, n_draws: usize, rng: &mut R) -> Result<(f64, f64)> {
    if n_draws < 10_000 {
        return Err(Error::InvalidParameter(format!(
            "zeta1 needs at least 1e4 draws, got {n_draws}"
        )));
    }
    let mut sum = 0.0;
    let mut sum2 = 0.0;
    for _ in 0..n_draws {
        let (u1, u2) = pair.sample_uniform_pair(rng);
        let x = u1 + u2 - 1.0;
        let c = x * x * x;
        sum += c;
        sum2 += c * c;
    }
    let n = n_draws as f64;
    let mean = sum / n;
    let var = (sum2 / n - mean * mean).max(0.0);
    Ok((mean, sqrt(var / n)))
}

/// Model-based Spearman's ρ by Monte Carlo: ρ_S = 12 E[U₁U₂] − 3.
pub fn spearman_rho_model<R: Rng + ?Sized>(
    pair: &BivariateModel,
    n_draws: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    if n_draws < 1000 {
        return Err(Error::InvalidParameter("spearman needs at least 1e3 draws".into()));
    }
    let mut sum = 0.0;
    let mut sum2 = 0.0;
    for _ in 0..n_draws {
        let (u1, u2) = pair.sample_uniform_pair(rng);
        let p = u1 * u2;
        sum += p;
        sum2 += p * p;
    }
    let n = n_draws as f64;
    let mean = sum / n;
    let var = (sum2 / n - mean * mean).max(0.0);
    Ok((12.0 * mean - 3.0, 12.0 * sqrt(var / n)))
}

/// Rank (Spearman) correlation of two data columns; ties get average ranks.
pub fn spearman_rho_data(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::DimensionMismatch("spearman needs two equal columns".into()));
    }
    let rx = average_ranks(x)?;
    let ry = average_ranks(y)?;
    pearson(&rx, &ry)
}

fn average_ranks(v: &[f64]) -> Result<Vec<f64>> {
    let n = v.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
    let mut ranks = alloc::vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut k = i;
        while k + 1 < n && v[idx[k + 1]] == v[idx[i]] {
            k += 1;
        }
        let avg = (i + k) as f64 / 2.0 + 1.0;
        for &j in &idx[i..=k] {
            ranks[j] = avg;
        }
        i = k + 1;
    }
    Ok(ranks)
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::Domain("constant column in correlation".into()));
    }
    Ok((sxy / sqrt(sxx * syy)).clamp(-1.0, 1.0))
}

/// Tail-weighted dependence measure: the correlation of ((1−2U₁)₊)^k and
/// ((1−2U₂)₊)^k restricted to the lower half-quadrant {U₁<1/2, U₂<1/2}
/// (mirrored for the upper tail), k = 6 by default. One fixed definition is
/// used on both empirical and model sides so the Δ comparisons are
/// internally consistent.
pub fn tail_weighted_data(u1: &[f64], u2: &[f64], tail: Tail, k: u32) -> Result<f64> {
    if u1.len() != u2.len() || u1.is_empty() {
        return Err(Error::DimensionMismatch("tail_weighted needs equal columns".into()));
    }
    if k < 1 {
        return Err(Error::InvalidParameter("power k must be >= 1".into()));
    }
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (&x, &y) in u1.iter().zip(u2) {
        let (sx, sy) = match tail {
            Tail::Lower => (1.0 - 2.0 * x, 1.0 - 2.0 * y),
            Tail::Upper => (2.0 * x - 1.0, 2.0 * y - 1.0),
        };
        if sx > 0.0 && sy > 0.0 {
            a.push(pow(sx, k as f64));
            b.push(pow(sy, k as f64));
        }
    }
    if a.len() < 8 {
        return Err(Error::Domain(format!(
            "only {} points in the {:?} quadrant; too degenerate for a correlation",
            a.len(),
            tail
        )));
    }
    pearson(&a, &b)
}

/// Model-side tail-weighted measure by Monte Carlo with the same estimator.
pub fn tail_weighted_model<R: Rng + ?Sized>(
    pair: &BivariateModel,
    tail: Tail,
    k: u32,
    n_draws: usize,
    rng: &mut R,
) -> Result<f64> {
    let mut u1 = Vec::with_capacity(n_draws);
    let mut u2 = Vec::with_capacity(n_draws);
    for _ in 0..n_draws {
        let (a, b) = pair.sample_uniform_pair(rng);
        u1.push(a);
        u2.push(b);
    }
    tail_weighted_data(&u1, &u2, tail, k)
}

/// The six Δ summaries comparing empirical and model-based dependence
/// matrices (Spearman, lower and upper tail-weighted): signed and absolute
/// entrywise averages over all n² cells.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DeltaMetrics {
    pub d_rho: f64,
    pub d_rho_abs: f64,
    pub d_lower: f64,
    pub d_lower_abs: f64,
    pub d_upper: f64,
    pub d_upper_abs: f64,
}

pub fn delta_metrics(
    empirical: (&Matrix, &Matrix, &Matrix),
    model: (&Matrix, &Matrix, &Matrix),
) -> Result<DeltaMetrics> {
    let mut out = [0.0f64; 6];
    for (slot, (e, m)) in
        [(empirical.0, model.0), (empirical.1, model.1), (empirical.2, model.2)]
            .into_iter()
            .enumerate()
    {
        if e.rows() != m.rows() || e.cols() != m.cols() || e.rows() != e.cols() {
            return Err(Error::DimensionMismatch(
                "delta metrics need matching square matrices".into(),
            ));
        }
        let n2 = (e.rows() * e.cols()) as f64;
        let mut signed = 0.0;
        let mut absolute = 0.0;
        for i in 0..e.rows() {
            for j in 0..e.cols() {
                let d = e[(i, j)] - m[(i, j)];
                signed += d;
                absolute += fabs(d);
            }
        }
        out[2 * slot] = signed / n2;
        out[2 * slot + 1] = absolute / n2;
    }
    Ok(DeltaMetrics {
        d_rho: out[0],
        d_rho_abs: out[1],
        d_lower: out[2],
        d_lower_abs: out[3],
        d_upper: out[4],
        d_upper_abs: out[5],
    })
}

/// Summary of the tail behaviour of one site pair.
#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TailReport {
    pub q_grid: Vec<f64>,
    pub lambda_lower_q: Vec<f64>,
    pub lambda_upper_q: Vec<f64>,
    /// Asymmetry ratio A(q) = λ_L^q / λ_U^q.
    pub asymmetry_q: Vec<f64>,
    pub zeta1: f64,
    pub zeta1_se: f64,
    pub spearman_rho: f64,
    pub alpha_lower: f64,
    pub alpha_upper: f64,
}

/// Build a [`TailReport`] for one pair: λ^q over a q-grid plus the
/// Monte-Carlo summaries (ζ₁, ρ_S and the tail-weighted measures share one
/// deterministic stream of `n_draws` pair samples).
pub fn tail_report<R: Rng + ?Sized>(
    pair: &BivariateModel,
    q_grid: &[f64],
    n_draws: usize,
    rng: &mut R,
) -> Result<TailReport> {
    let mut lambda_lower_q = Vec::with_capacity(q_grid.len());
    let mut lambda_upper_q = Vec::with_capacity(q_grid.len());
    let mut asymmetry_q = Vec::with_capacity(q_grid.len());
    for &q in q_grid {
        let l = lambda_q(pair, q, Tail::Lower)?;
        let u = lambda_q(pair, q, Tail::Upper)?;
        lambda_lower_q.push(l);
        lambda_upper_q.push(u);
        asymmetry_q.push(if u > 0.0 { l / u } else { f64::INFINITY });
    }

    let mut u1 = Vec::with_capacity(n_draws);
    let mut u2 = Vec::with_capacity(n_draws);
    for _ in 0..n_draws {
        let (a, b) = pair.sample_uniform_pair(rng);
        u1.push(a);
        u2.push(b);
    }
    let n = n_draws as f64;
    let mut sum3 = 0.0;
    let mut sum6 = 0.0;
    let mut sum_uu = 0.0;
    for (&a, &b) in u1.iter().zip(&u2) {
        let c = pow(a + b - 1.0, 3.0);
        sum3 += c;
        sum6 += c * c;
        sum_uu += a * b;
    }
    let zeta1 = sum3 / n;
    let zeta1_se = sqrt(((sum6 / n - zeta1 * zeta1).max(0.0)) / n);
    let spearman = 12.0 * sum_uu / n - 3.0;
    let alpha_lower = tail_weighted_data(&u1, &u2, Tail::Lower, 6)?;
    let alpha_upper = tail_weighted_data(&u1, &u2, Tail::Upper, 6)?;

    Ok(TailReport {
        q_grid: q_grid.to_vec(),
        lambda_lower_q,
        lambda_upper_q,
        asymmetry_q,
        zeta1,
        zeta1_se,
        spearman_rho: spearman,
        alpha_lower,
        alpha_upper,
    })
}
