//! Gradient descent with Armijo backtracking.
//!
//! Adequate for the geodesic energy NLP: the objective is smooth and the
//! linear-curve initialization is already close to the minimizer.

use super::{OptError, SolveReport, SolveStatus};
use nalgebra::DVector;

const ARMIJO_C: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

#[derive(Debug, Clone, Copy)]
pub struct DescentOpts {
    pub max_iter: usize,
    pub grad_tol: f64,
}

impl Default for DescentOpts {
    fn default() -> Self {
        Self { max_iter: 200, grad_tol: 1e-8 }
    }
}

/// Minimize a smooth function from `x0`. Every accepted step satisfies the
/// Armijo condition `f(x + t p) <= f(x) - c t |g|^2`, so the objective is
/// strictly decreasing across iterations.
pub fn minimize_smooth<F, G>(
    objective: F,
    gradient: G,
    x0: DVector<f64>,
    opts: DescentOpts,
) -> Result<SolveReport, OptError>
where
    F: Fn(&DVector<f64>) -> f64,
    G: Fn(&DVector<f64>) -> DVector<f64>,
{
    let mut x = x0;
    let mut fx = objective(&x);
    check_finite(fx, &x, "objective")?;

    let mut iterations = 0;
    for _ in 0..opts.max_iter {
        let g = gradient(&x);
        if g.iter().any(|v| !v.is_finite()) {
            return Err(OptError::NonFinite { what: "gradient", at: x.iter().copied().collect() });
        }
        let gnorm = g.norm();
        if gnorm <= opts.grad_tol {
            return Ok(SolveReport {
                status: SolveStatus::Optimal,
                solution: x,
                objective: fx,
                active_set: Vec::new(),
                iterations,
            });
        }
        let g2 = gnorm * gnorm;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_BACKTRACKS {
            let cand = &x - t * &g;
            let fc = objective(&cand);
            check_finite(fc, &cand, "objective")?;
            if fc <= fx - ARMIJO_C * t * g2 {
                x = cand;
                fx = fc;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        iterations += 1;
        if !accepted {
            // No decrease at the smallest step: numerically stationary.
            break;
        }
    }

    let g = gradient(&x);
    let status = if g.norm() <= opts.grad_tol { SolveStatus::Optimal } else { SolveStatus::MaxIter };
    Ok(SolveReport { status, solution: x, objective: fx, active_set: Vec::new(), iterations })
}

fn check_finite(v: f64, x: &DVector<f64>, what: &'static str) -> Result<(), OptError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(OptError::NonFinite { what, at: x.iter().copied().collect() })
    }
}
