//! Quasi-Newton maximizer (BFGS inverse-Hessian updates, step-halving line
//! search) on an unconstrained parameter scale.
//!
//! The line search only ever accepts steps that improve the objective, so
//! the iterate sequence is monotone. Convergence is declared on the scaled
//! gradient norm ‖∇ℓ‖∞ / max(1, |ℓ|).

use crate::error::Result;
use crate::numerics::linalg::Matrix;
use crate::numerics::math::fabs;

use alloc::vec::Vec;

#[derive(Debug, Clone)]
pub struct OptimOptions {
    pub max_iterations: usize,
    /// Tolerance on the scaled gradient norm.
    pub gradient_tol: f64,
    pub step_halving_max: usize,
    /// Optional box constraints on the (unconstrained) optimization scale.
    pub bounds: Option<Vec<(f64, f64)>>,
    pub keep_trace: bool,
}

impl Default for OptimOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            gradient_tol: 1e-6,
            step_halving_max: 30,
            bounds: None,
            keep_trace: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub scaled_grad_norm: f64,
    /// (iteration, objective, scaled gradient norm) per accepted step.
    pub trace: Vec<(usize, f64, f64)>,
}

fn scaled_norm(grad: &[f64], value: f64) -> f64 {
    let mut m = 0.0f64;
    for g in grad {
        if fabs(*g) > m {
            m = fabs(*g);
        }
    }
    m / if fabs(value) > 1.0 { fabs(value) } else { 1.0 }
}

fn clamp_to_bounds(x: &mut [f64], bounds: &Option<Vec<(f64, f64)>>) {
    if let Some(b) = bounds {
        for (xi, (lo, hi)) in x.iter_mut().zip(b) {
            *xi = xi.clamp(*lo, *hi);
        }
    }
}

/// Maximize `f`; the closure returns the objective and its gradient.
pub fn maximize<F>(mut f: F, x0: &[f64], opts: &OptimOptions) -> Result<OptimResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let k = x0.len();
    let mut x = x0.to_vec();
    clamp_to_bounds(&mut x, &opts.bounds);
    let (mut value, mut grad) = f(&x)?;
    let mut h_inv = Matrix::identity(k);
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut first_update = true;

    loop {
        let sg = scaled_norm(&grad, value);
        if opts.keep_trace {
            trace.push((iterations, value, sg));
        }
        if sg <= opts.gradient_tol {
            return Ok(OptimResult {
                x,
                value,
                gradient: grad,
                iterations,
                converged: true,
                scaled_grad_norm: sg,
                trace,
            });
        }
        if iterations >= opts.max_iterations {
            return Ok(OptimResult {
                x,
                value,
                gradient: grad,
                iterations,
                converged: false,
                scaled_grad_norm: sg,
                trace,
            });
        }
        iterations += 1;

        // Ascent direction d = H⁻¹ g (H⁻¹ approximates the inverse of −∇²ℓ).
        let mut dir = h_inv.mul_vec(&grad)?;
        let descent: f64 = dir.iter().zip(&grad).map(|(d, g)| d * g).sum();
        if !(descent > 0.0) || dir.iter().any(|d| !d.is_finite()) {
            // Reset curvature if the direction went bad.
            h_inv = Matrix::identity(k);
            dir = grad.clone();
        }
        let slope: f64 = dir.iter().zip(&grad).map(|(d, g)| d * g).sum();

        // Step halving with an Armijo acceptance test.
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.step_halving_max {
            let mut x_new: Vec<f64> =
                x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            clamp_to_bounds(&mut x_new, &opts.bounds);
            match f(&x_new) {
                Ok((v_new, g_new)) if v_new.is_finite() => {
                    if v_new >= value + 1e-4 * step * slope.min(0.0)
                        && v_new > value - 1e-14 * (1.0 + fabs(value))
                        && v_new >= value
                    {
                        accepted = Some((x_new, v_new, g_new));
                        break;
                    }
                }
                _ => {}
            }
            step *= 0.5;
        }

        let Some((x_new, v_new, g_new)) = accepted else {
            // No improving step: report the best iterate found.
            let sg = scaled_norm(&grad, value);
            return Ok(OptimResult {
                x,
                value,
                gradient: grad,
                iterations,
                converged: sg <= opts.gradient_tol,
                scaled_grad_norm: sg,
                trace,
            });
        };

        // BFGS update of the inverse Hessian approximation, with the usual
        // initial scaling on the first successful update.
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        // y is the change of the *descent-problem* gradient (−ℓ'), hence
        // grad_old − grad_new in ascent terms.
        let y: Vec<f64> = grad.iter().zip(&g_new).map(|(old, new)| old - new).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        if sy > 1e-12 {
            if first_update {
                let yy: f64 = y.iter().map(|v| v * v).sum();
                if yy > 0.0 {
                    let scale = sy / yy;
                    for i in 0..k {
                        h_inv[(i, i)] = scale;
                    }
                }
                first_update = false;
            }
            let rho = 1.0 / sy;
            // H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ
            let hy = h_inv.mul_vec(&y)?;
            let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
            for i in 0..k {
                for j in 0..k {
                    let v = h_inv[(i, j)] - rho * (s[i] * hy[j] + hy[i] * s[j])
                        + rho * rho * yhy * s[i] * s[j]
                        + rho * s[i] * s[j];
                    h_inv[(i, j)] = v;
                }
            }
        }

        x = x_new;
        value = v_new;
        grad = g_new;
    }
}
