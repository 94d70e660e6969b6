//! Two-phase dense simplex with Bland's rule.
//!
//! Variables are brought to standard form by shifting bounded variables to
//! nonnegative ones and splitting free variables; `a.x <= b` rows get slack
//! variables, and rows with negative right-hand side get artificials for
//! phase 1. Bland's rule keeps the tiny, often degenerate problems from
//! cycling; speed is not a concern at these sizes.

use super::{LinearProgram, OptError, SolveReport, SolveStatus, FEASIBILITY_TOL};
use nalgebra::DVector;

const PIVOT_TOL: f64 = 1e-11;

/// How an original variable maps into the nonnegative standard form.
#[derive(Clone, Copy)]
enum VarMap {
    /// `x = lo + x'`, optional extra row `x' <= hi - lo`.
    Shifted { lo: f64 },
    /// `x = hi - x'` (upper bound only).
    Mirrored { hi: f64 },
    /// `x = x+ - x-` (free).
    Split,
}

struct Tableau {
    /// `rows x cols` constraint coefficients, last column is the rhs.
    a: Vec<Vec<f64>>,
    /// Objective row (reduced costs), last entry is minus the objective value.
    cost: Vec<f64>,
    basis: Vec<usize>,
    ncols: usize,
}

impl Tableau {
    fn pivot(&mut self, row: usize, col: usize) {
        let piv = self.a[row][col];
        let inv = 1.0 / piv;
        for v in self.a[row].iter_mut() {
            *v *= inv;
        }
        let pivot_row = self.a[row].clone();
        for (r, arow) in self.a.iter_mut().enumerate() {
            if r == row {
                continue;
            }
            let factor = arow[col];
            if factor != 0.0 {
                for (v, pv) in arow.iter_mut().zip(&pivot_row) {
                    *v -= factor * pv;
                }
            }
        }
        let factor = self.cost[col];
        if factor != 0.0 {
            for (v, pv) in self.cost.iter_mut().zip(&pivot_row) {
                *v -= factor * pv;
            }
        }
        self.basis[row] = col;
    }

    /// One simplex phase under Bland's rule. Returns `None` on success,
    /// `Some(status)` when unbounded or out of iterations.
    fn run(&mut self, max_pivots: usize, allowed_cols: usize) -> Option<SolveStatus> {
        for _ in 0..max_pivots {
            // Bland: entering variable is the lowest-index negative reduced cost.
            let entering = (0..allowed_cols).find(|&j| self.cost[j] < -PIVOT_TOL);
            let Some(col) = entering else {
                return None;
            };
            // Ratio test; ties broken by the lowest basis variable index (Bland).
            let mut best: Option<(f64, usize)> = None;
            for r in 0..self.a.len() {
                let coef = self.a[r][col];
                if coef > PIVOT_TOL {
                    let ratio = self.a[r][self.ncols] / coef;
                    let better = match best {
                        None => true,
                        Some((bratio, brow)) => {
                            ratio < bratio - PIVOT_TOL
                                || (ratio < bratio + PIVOT_TOL
                                    && self.basis[r] < self.basis[brow])
                        }
                    };
                    if better {
                        best = Some((ratio, r));
                    }
                }
            }
            match best {
                Some((_, row)) => self.pivot(row, col),
                None => return Some(SolveStatus::Unbounded),
            }
        }
        Some(SolveStatus::MaxIter)
    }
}

/// Solve a dense LP. Infeasibility and unboundedness are reported through
/// `SolveReport::status`, never as errors.
pub fn solve_lp(lp: &LinearProgram) -> Result<SolveReport, OptError> {
    lp.validate()?;
    let d = lp.dim();

    // Map original variables onto nonnegative standard-form columns.
    let mut maps = Vec::with_capacity(d);
    let mut col_of_var = Vec::with_capacity(d);
    let mut extra_rows: Vec<(usize, f64)> = Vec::new(); // (std column, upper bound)
    let mut n_std = 0usize;
    for j in 0..d {
        let (lo, hi) = lp
            .var_bounds
            .as_ref()
            .map(|b| b[j])
            .unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
        col_of_var.push(n_std);
        if lo.is_finite() {
            maps.push(VarMap::Shifted { lo });
            if hi.is_finite() {
                extra_rows.push((n_std, hi - lo));
            }
            n_std += 1;
        } else if hi.is_finite() {
            maps.push(VarMap::Mirrored { hi });
            n_std += 1;
        } else {
            maps.push(VarMap::Split);
            n_std += 2;
        }
    }

    // Assemble rows (original + bound rows) over standard-form variables.
    let m = lp.ineq_matrix.nrows() + extra_rows.len();
    let n_slack = m;
    let mut rows = vec![vec![0.0; n_std]; m];
    let mut rhs = vec![0.0; m];
    for r in 0..lp.ineq_matrix.nrows() {
        let mut b = lp.ineq_rhs[r];
        for j in 0..d {
            let a = lp.ineq_matrix[(r, j)];
            match maps[j] {
                VarMap::Shifted { lo } => {
                    rows[r][col_of_var[j]] = a;
                    b -= a * lo;
                }
                VarMap::Mirrored { hi } => {
                    rows[r][col_of_var[j]] = -a;
                    b -= a * hi;
                }
                VarMap::Split => {
                    rows[r][col_of_var[j]] = a;
                    rows[r][col_of_var[j] + 1] = -a;
                }
            }
        }
        rhs[r] = b;
    }
    for (k, &(col, ub)) in extra_rows.iter().enumerate() {
        let r = lp.ineq_matrix.nrows() + k;
        rows[r][col] = 1.0;
        rhs[r] = ub;
    }

    // Standard-form cost (constant shifts are irrelevant to the argmin).
    let mut std_cost = vec![0.0; n_std];
    for j in 0..d {
        let c = lp.cost[j];
        match maps[j] {
            VarMap::Shifted { .. } => std_cost[col_of_var[j]] = c,
            VarMap::Mirrored { .. } => std_cost[col_of_var[j]] = -c,
            VarMap::Split => {
                std_cost[col_of_var[j]] = c;
                std_cost[col_of_var[j] + 1] = -c;
            }
        }
    }

    // Build the tableau: structural vars, slacks, then artificials.
    let mut need_artificial = Vec::new();
    for r in 0..m {
        if rhs[r] < 0.0 {
            for v in rows[r].iter_mut() {
                *v = -*v;
            }
            rhs[r] = -rhs[r];
            need_artificial.push(true);
        } else {
            need_artificial.push(false);
        }
    }
    let n_art: usize = need_artificial.iter().filter(|&&x| x).count();
    let ncols = n_std + n_slack + n_art;
    let mut a = vec![vec![0.0; ncols + 1]; m];
    let mut basis = vec![0usize; m];
    let mut art_idx = 0usize;
    for r in 0..m {
        a[r][..n_std].copy_from_slice(&rows[r]);
        // Slack coefficient flips sign with the row.
        a[r][n_std + r] = if need_artificial[r] { -1.0 } else { 1.0 };
        a[r][ncols] = rhs[r];
        if need_artificial[r] {
            let c = n_std + n_slack + art_idx;
            a[r][c] = 1.0;
            basis[r] = c;
            art_idx += 1;
        } else {
            basis[r] = n_std + r;
        }
    }

    let mut tab = Tableau { a, cost: vec![0.0; ncols + 1], basis, ncols };
    let max_pivots = 200 + 50 * (m + n_std);
    let mut iterations = 0usize;

    // Phase 1: minimize the sum of artificials.
    if n_art > 0 {
        for c in (n_std + n_slack)..ncols {
            tab.cost[c] = 1.0;
        }
        // Price out the basic artificials.
        for r in 0..m {
            if tab.basis[r] >= n_std + n_slack {
                let row = tab.a[r].clone();
                for (v, rv) in tab.cost.iter_mut().zip(&row) {
                    *v -= *rv;
                }
            }
        }
        if let Some(status) = tab.run(max_pivots, ncols) {
            // Phase 1 is bounded below by zero, so only MaxIter can surface.
            return Ok(report_status(status, d));
        }
        iterations += 1;
        let phase1_obj = -tab.cost[ncols];
        if phase1_obj > FEASIBILITY_TOL.max(1e-9 * (1.0 + rhs.iter().sum::<f64>())) {
            return Ok(report_status(SolveStatus::Infeasible, d));
        }
        // Drive any artificial still in the basis out of it.
        for r in 0..m {
            if tab.basis[r] >= n_std + n_slack {
                if let Some(col) =
                    (0..n_std + n_slack).find(|&j| tab.a[r][j].abs() > 1e-8)
                {
                    tab.pivot(r, col);
                } else {
                    // Redundant row; zero it so it can never pivot again.
                    for v in tab.a[r].iter_mut() {
                        *v = 0.0;
                    }
                }
            }
        }
    }

    // Phase 2 with the real cost, artificial columns excluded.
    tab.cost = vec![0.0; ncols + 1];
    tab.cost[..n_std].copy_from_slice(&std_cost);
    for r in 0..m {
        let b = tab.basis[r];
        if b < n_std + n_slack && tab.cost[b] != 0.0 {
            let factor = tab.cost[b];
            let row = tab.a[r].clone();
            for (v, rv) in tab.cost.iter_mut().zip(&row) {
                *v -= factor * rv;
            }
        }
    }
    if let Some(status) = tab.run(max_pivots, n_std + n_slack) {
        return Ok(report_status(status, d));
    }
    iterations += 1;

    // Recover the original variables.
    let mut std_x = vec![0.0; n_std];
    for r in 0..m {
        if tab.basis[r] < n_std {
            std_x[tab.basis[r]] = tab.a[r][ncols];
        }
    }
    let mut x = DVector::zeros(d);
    for j in 0..d {
        x[j] = match maps[j] {
            VarMap::Shifted { lo } => lo + std_x[col_of_var[j]],
            VarMap::Mirrored { hi } => hi - std_x[col_of_var[j]],
            VarMap::Split => std_x[col_of_var[j]] - std_x[col_of_var[j] + 1],
        };
    }
    let objective = lp.cost.dot(&x);
    let mut active = Vec::new();
    for r in 0..lp.ineq_matrix.nrows() {
        let resid = lp.ineq_rhs[r] - lp.ineq_matrix.row(r).transpose().dot(&x);
        if resid.abs() <= 1e-7 {
            active.push(r);
        }
    }
    Ok(SolveReport {
        status: SolveStatus::Optimal,
        solution: x,
        objective,
        active_set: active,
        iterations,
    })
}

fn report_status(status: SolveStatus, d: usize) -> SolveReport {
    SolveReport {
        status,
        solution: DVector::zeros(d),
        objective: f64::NAN,
        active_set: Vec::new(),
        iterations: 0,
    }
}
