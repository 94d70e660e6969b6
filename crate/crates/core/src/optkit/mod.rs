//! Dense linear, quadratic, and smooth nonlinear program solvers.
//!
//! Sized for the small problems this crate generates (a handful of decision
//! variables, at most a few hundred constraint rows). All solvers are pure
//! functions of their inputs and safe to call concurrently.

mod descent;
mod lp;
mod qp;

pub use descent::{minimize_smooth, DescentOpts};
pub use lp::solve_lp;
pub use qp::solve_qp;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Constraint feasibility tolerance used by every solver in the crate.
pub const FEASIBILITY_TOL: f64 = 1e-9;
/// Optimality (KKT / reduced-cost / gradient) tolerance.
pub const OPTIMALITY_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum OptError {
    #[error("malformed program: {0}")]
    BadShape(String),
    #[error("hessian is not symmetric positive definite")]
    NotPositiveDefinite,
    #[error("non-finite {what} encountered at iterate {at:?}")]
    NonFinite { what: &'static str, at: Vec<f64> },
}

/// Linear program `min cost . x  s.t.  ineq_matrix * x <= ineq_rhs`,
/// optionally with per-variable interval bounds.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub cost: DVector<f64>,
    pub ineq_matrix: DMatrix<f64>,
    pub ineq_rhs: DVector<f64>,
    /// Per-variable `(lower, upper)`; entries may be infinite. `None` means
    /// all variables free.
    pub var_bounds: Option<Vec<(f64, f64)>>,
}

impl LinearProgram {
    pub fn dim(&self) -> usize {
        self.cost.len()
    }

    pub(crate) fn validate(&self) -> Result<(), OptError> {
        let d = self.cost.len();
        if d == 0 {
            return Err(OptError::BadShape("zero decision variables".into()));
        }
        if self.ineq_matrix.nrows() != self.ineq_rhs.len() {
            return Err(OptError::BadShape(format!(
                "{} constraint rows but {} rhs entries",
                self.ineq_matrix.nrows(),
                self.ineq_rhs.len()
            )));
        }
        if self.ineq_matrix.ncols() != d && self.ineq_matrix.nrows() > 0 {
            return Err(OptError::BadShape(format!(
                "constraint matrix has {} columns for {} variables",
                self.ineq_matrix.ncols(),
                d
            )));
        }
        if let Some(b) = &self.var_bounds {
            if b.len() != d {
                return Err(OptError::BadShape("bound count != variable count".into()));
            }
            for (i, (lo, hi)) in b.iter().enumerate() {
                if lo > hi {
                    return Err(OptError::BadShape(format!("empty bound on variable {i}")));
                }
            }
        }
        let finite = self.cost.iter().all(|v| v.is_finite())
            && self.ineq_matrix.iter().all(|v| v.is_finite())
            && self.ineq_rhs.iter().all(|v| v.is_finite());
        if !finite {
            return Err(OptError::BadShape("non-finite program data".into()));
        }
        Ok(())
    }
}

/// Quadratic program `min 0.5 x'Hx + g'x  s.t.  ineq_matrix * x <= ineq_rhs`.
/// The Hessian must be symmetric positive definite (checked by factorization).
#[derive(Debug, Clone)]
pub struct QuadraticProgram {
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    pub ineq_matrix: DMatrix<f64>,
    pub ineq_rhs: DVector<f64>,
}

impl QuadraticProgram {
    pub fn dim(&self) -> usize {
        self.gradient.len()
    }

    pub(crate) fn validate(&self) -> Result<(), OptError> {
        let d = self.gradient.len();
        if d == 0 || self.hessian.nrows() != d || self.hessian.ncols() != d {
            return Err(OptError::BadShape("hessian/gradient dimension mismatch".into()));
        }
        if self.ineq_matrix.nrows() != self.ineq_rhs.len() {
            return Err(OptError::BadShape("constraint rows != rhs entries".into()));
        }
        if self.ineq_matrix.nrows() > 0 && self.ineq_matrix.ncols() != d {
            return Err(OptError::BadShape("constraint column count mismatch".into()));
        }
        for i in 0..d {
            for j in (i + 1)..d {
                if (self.hessian[(i, j)] - self.hessian[(j, i)]).abs() > 1e-12 {
                    return Err(OptError::BadShape("hessian not symmetric".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIter,
}

/// Outcome of any solver call. `active_set` lists the inequality rows that
/// hold with equality at the solution (empty for unconstrained problems).
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub solution: DVector<f64>,
    pub objective: f64,
    pub active_set: Vec<usize>,
    pub iterations: usize,
}

impl SolveReport {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}
