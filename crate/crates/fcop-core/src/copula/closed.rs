//! Closed-form joint density for exponential factors, with the partial
//! derivatives the fitting layer needs.
//!
//! Completing the square in the factor integral gives, per exponential
//! branch (rate θ, upper branch sign; the mirrored branch swaps b → −b),
//!
//! ```text
//! ∫₀^∞ exp{−(a/2)(v − b/a)²} θ e^{−θv} dv
//!     = θ √(2π/a) · exp{(θ² − 2θb)/(2a)} · Φ((b − θ)/√a),
//! ```
//!
//! so log f_n(w) = −(n/2)ln 2π − ½log|Σ| − ½(c − b²/a) + ln κ + ½ln(2π/a)
//! + ln S with S the branch sum. Everything is kept in log space; Φ ratios
//! use the stable Mills form.

use crate::factor::ClosedFactorForm;
use crate::numerics::math::{exp, ln, log_sum_exp, sqrt};
use crate::numerics::normal;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Per-branch quantities: t = (θ² ∓ 2θb)/(2a), s = (±b − θ)/√a.
#[derive(Debug, Clone, Copy)]
#[allow(dead_code)]
struct Branch {
    theta: f64,
    t: f64,
    s: f64,
    /// t + ln Φ(s), the branch's log contribution.
    log_term: f64,
}

fn upper_branch(theta: f64, a: f64, b: f64) -> Branch {
    let t = (theta * theta - 2.0 * theta * b) / (2.0 * a);
    let s = (b - theta) / sqrt(a);
    Branch { theta, t, s, log_term: t + normal::log_cdf(s) }
}

fn lower_branch(theta: f64, a: f64, b: f64) -> Branch {
    let t = (theta * theta + 2.0 * theta * b) / (2.0 * a);
    let s = (-b - theta) / sqrt(a);
    Branch { theta, t, s, log_term: t + normal::log_cdf(s) }
}

/// log f_n(w) given the completed-square statistics.
pub fn log_density(form: &ClosedFactorForm, n: usize, logdet: f64, a: f64, b: f64, c: f64) -> f64 {
    let base = -0.5 * (n as f64) * LN_2PI - 0.5 * logdet;
    match *form {
        ClosedFactorForm::Gaussian => base - 0.5 * c,
        ClosedFactorForm::ExponentialOneSided { theta } => {
            let br = upper_branch(theta, a, b);
            base - 0.5 * (c - b * b / a) + ln(theta) + 0.5 * (LN_2PI - ln(a)) + br.log_term
        }
        ClosedFactorForm::ExponentialDifference { theta1, theta2 } => {
            let kappa = theta1 * theta2 / (theta1 + theta2);
            let b1 = upper_branch(theta1, a, b);
            let b2 = lower_branch(theta2, a, b);
            base - 0.5 * (c - b * b / a)
                + ln(kappa)
                + 0.5 * (LN_2PI - ln(a))
                + log_sum_exp(b1.log_term, b2.log_term)
        }
    }
}

/// Partial derivatives of log f_n with respect to the factor rates and the
/// completed-square statistics (a, b, c) plus log|Σ|.
#[derive(Debug, Clone, Copy, Default)]
pub struct LogDensityGrad {
    pub value: f64,
    pub d_theta1: f64,
    pub d_theta2: f64,
    pub d_a: f64,
    pub d_b: f64,
    pub d_c: f64,
    pub d_logdet: f64,
}

pub fn log_density_grad(
    form: &ClosedFactorForm,
    n: usize,
    logdet: f64,
    a: f64,
    b: f64,
    c: f64,
) -> LogDensityGrad {
    let value = log_density(form, n, logdet, a, b, c);
    let mut g = LogDensityGrad { value, d_c: -0.5, d_logdet: -0.5, ..Default::default() };
    match *form {
        ClosedFactorForm::Gaussian => g,
        ClosedFactorForm::ExponentialOneSided { theta } => {
            let br = upper_branch(theta, a, b);
            let r = normal::pdf_over_cdf(br.s);
            let sa = sqrt(a);
            g.d_theta1 = 1.0 / theta + (theta - b) / a - r / sa;
            g.d_b = b / a + (-theta / a + r / sa);
            g.d_a = -b * b / (2.0 * a * a) - 0.5 / a + (-br.t / a - r * br.s / (2.0 * a));
            g
        }
        ClosedFactorForm::ExponentialDifference { theta1, theta2 } => {
            let b1 = upper_branch(theta1, a, b);
            let b2 = lower_branch(theta2, a, b);
            // Softmax weights of the two branches.
            let lse = log_sum_exp(b1.log_term, b2.log_term);
            let p1 = exp(b1.log_term - lse);
            let p2 = exp(b2.log_term - lse);
            let r1 = normal::pdf_over_cdf(b1.s);
            let r2 = normal::pdf_over_cdf(b2.s);
            let sa = sqrt(a);
            let sum = theta1 + theta2;

            g.d_theta1 = 1.0 / theta1 - 1.0 / sum + p1 * ((theta1 - b) / a - r1 / sa);
            g.d_theta2 = 1.0 / theta2 - 1.0 / sum + p2 * ((theta2 + b) / a - r2 / sa);
            g.d_b = b / a
                + p1 * (-theta1 / a + r1 / sa)
                + p2 * (theta2 / a - r2 / sa);
            g.d_a = -b * b / (2.0 * a * a) - 0.5 / a
                + p1 * (-b1.t / a - r1 * b1.s / (2.0 * a))
                + p2 * (-b2.t / a - r2 * b2.s / (2.0 * a));
            g
        }
    }
}

/// Scalar marginal quantities for the exponential families, with the
/// θ-derivatives of F₁ and the (z, θ)-derivatives of log f₁ needed for the
/// chain rule through z = F₁⁻¹(u; θ).
#[derive(Debug, Clone, Copy, Default)]
pub struct MarginalClosedEval {
    #[allow(dead_code)] // exercised by the oracle tests; callers use quantiles
    pub cdf: f64,
    pub log_pdf: f64,
    /// ∂F₁/∂θ₁, ∂F₁/∂θ₂ (second component zero for the one-sided form).
    pub dcdf_dtheta: [f64; 2],
    /// ∂log f₁/∂z.
    pub dlogpdf_dz: f64,
    /// ∂log f₁/∂θ₁, ∂log f₁/∂θ₂.
    pub dlogpdf_dtheta: [f64; 2],
}

pub fn marginal_closed_eval(form: &ClosedFactorForm, w: f64) -> MarginalClosedEval {
    match *form {
        ClosedFactorForm::Gaussian => MarginalClosedEval {
            cdf: normal::cdf(w),
            log_pdf: normal::log_pdf(w),
            dlogpdf_dz: -w,
            ..Default::default()
        },
        ClosedFactorForm::ExponentialOneSided { theta } => {
            // A = e^{θ²/2−θw} Φ(w−θ);  F = Φ(w) − A;  f = θ A.
            let ln_a = theta * theta / 2.0 - theta * w + normal::log_cdf(w - theta);
            let a = exp(ln_a);
            let r = normal::pdf_over_cdf(w - theta);
            MarginalClosedEval {
                cdf: (normal::cdf(w) - a).clamp(0.0, 1.0),
                log_pdf: ln(theta) + ln_a,
                dcdf_dtheta: [normal::pdf(w) - (theta - w) * a, 0.0],
                dlogpdf_dz: -theta + r,
                dlogpdf_dtheta: [1.0 / theta + (theta - w) - r, 0.0],
            }
        }
        ClosedFactorForm::ExponentialDifference { theta1, theta2 } => {
            let sum = theta1 + theta2;
            let c1 = theta2 / sum;
            let c2 = theta1 / sum;
            let kappa = theta1 * theta2 / sum;
            let ln_a = theta1 * theta1 / 2.0 - theta1 * w + normal::log_cdf(w - theta1);
            let ln_b = theta2 * theta2 / 2.0 + theta2 * w + normal::log_cdf(-w - theta2);
            let a = exp(ln_a);
            let b = exp(ln_b);
            let lse = log_sum_exp(ln_a, ln_b);
            let p1 = exp(ln_a - lse);
            let p2 = exp(ln_b - lse);
            let r1 = normal::pdf_over_cdf(w - theta1);
            let r2 = normal::pdf_over_cdf(-w - theta2);
            let phi_w = normal::pdf(w);

            MarginalClosedEval {
                cdf: (normal::cdf(w) - c1 * a + c2 * b).clamp(0.0, 1.0),
                log_pdf: ln(kappa) + lse,
                dcdf_dtheta: [
                    theta2 / (sum * sum) * (a + b) - c1 * ((theta1 - w) * a - phi_w),
                    -theta1 / (sum * sum) * (a + b) + c2 * ((theta2 + w) * b - phi_w),
                ],
                dlogpdf_dz: -theta1 * p1 + theta2 * p2,
                dlogpdf_dtheta: [
                    1.0 / theta1 - 1.0 / sum + p1 * (theta1 - w - r1),
                    1.0 / theta2 - 1.0 / sum + p2 * (theta2 + w - r2),
                ],
            }
        }
    }
}
