//! Primal active-set method for strictly convex QPs.
//!
//! The KKT system is refactorized from scratch on every working-set change;
//! with at most a handful of variables that costs nothing and avoids the
//! bookkeeping of incremental updates. Tie-breaking is deterministic: the
//! lowest-index blocking constraint enters, the lowest-index constraint with
//! a negative multiplier leaves.

use super::{
    solve_lp, LinearProgram, OptError, QuadraticProgram, SolveReport, SolveStatus,
    FEASIBILITY_TOL, OPTIMALITY_TOL,
};
use nalgebra::{DMatrix, DVector};

pub fn solve_qp(qp: &QuadraticProgram) -> Result<SolveReport, OptError> {
    qp.validate()?;
    let d = qp.dim();
    let chol = qp
        .hessian
        .clone()
        .cholesky()
        .ok_or(OptError::NotPositiveDefinite)?;

    let m = qp.ineq_matrix.nrows();
    let objective = |x: &DVector<f64>| 0.5 * (qp.hessian.clone() * x).dot(x) + qp.gradient.dot(x);

    // Unconstrained minimum; if feasible it is the optimum.
    let x_free = chol.solve(&(-&qp.gradient));
    let feasible = |x: &DVector<f64>| {
        (0..m).all(|i| qp.ineq_matrix.row(i).transpose().dot(x) <= qp.ineq_rhs[i] + FEASIBILITY_TOL)
    };
    if feasible(&x_free) {
        return Ok(SolveReport {
            status: SolveStatus::Optimal,
            objective: objective(&x_free),
            solution: x_free,
            active_set: Vec::new(),
            iterations: 0,
        });
    }

    // Phase 1 through the LP solver: any point of {Ax <= b} will do.
    let phase1 = solve_lp(&LinearProgram {
        cost: DVector::zeros(d),
        ineq_matrix: qp.ineq_matrix.clone(),
        ineq_rhs: qp.ineq_rhs.clone(),
        var_bounds: None,
    })?;
    if phase1.status != SolveStatus::Optimal {
        return Ok(SolveReport {
            status: SolveStatus::Infeasible,
            solution: DVector::zeros(d),
            objective: f64::NAN,
            active_set: Vec::new(),
            iterations: 0,
        });
    }
    let mut x = phase1.solution;

    // Working set: constraints active at the start point, kept independent
    // by capping at d rows.
    let mut working: Vec<usize> = Vec::new();
    for i in 0..m {
        if working.len() >= d {
            break;
        }
        let resid = qp.ineq_rhs[i] - qp.ineq_matrix.row(i).transpose().dot(&x);
        if resid.abs() <= FEASIBILITY_TOL * 10.0 {
            working.push(i);
        }
    }

    let max_iter = 50 * (m + 2);
    for iter in 0..max_iter {
        // Equality-constrained subproblem on the working set.
        let k = working.len();
        let (x_eq, lambda) = match solve_kkt(qp, &working) {
            Some(sol) => sol,
            None => {
                // Dependent working set; drop the most recently added row.
                working.pop();
                continue;
            }
        };
        let p = &x_eq - &x;

        if p.amax() <= 1e-11 {
            // Stationary on the working set: check multipliers.
            let neg = (0..k).find(|&i| lambda[i] < -OPTIMALITY_TOL);
            match neg {
                None => {
                    let mut active = working.clone();
                    active.sort_unstable();
                    return Ok(SolveReport {
                        status: SolveStatus::Optimal,
                        objective: objective(&x_eq),
                        solution: x_eq,
                        active_set: active,
                        iterations: iter,
                    });
                }
                Some(drop_pos) => {
                    // Lowest-index constraint with a negative multiplier leaves.
                    let drop_row = working
                        .iter()
                        .enumerate()
                        .filter(|&(i, _)| lambda[i] < -OPTIMALITY_TOL)
                        .min_by_key(|&(_, row)| *row)
                        .map(|(i, _)| i)
                        .unwrap_or(drop_pos);
                    working.remove(drop_row);
                }
            }
        } else {
            // Step toward x_eq, stopping at the first blocking constraint.
            let mut alpha = 1.0f64;
            let mut blocking: Option<usize> = None;
            for i in 0..m {
                if working.contains(&i) {
                    continue;
                }
                let denom = qp.ineq_matrix.row(i).transpose().dot(&p);
                if denom > 1e-12 {
                    let resid = qp.ineq_rhs[i] - qp.ineq_matrix.row(i).transpose().dot(&x);
                    let ratio = (resid / denom).max(0.0);
                    if ratio < alpha - 1e-12 {
                        alpha = ratio;
                        blocking = Some(i);
                    } else if (ratio - alpha).abs() <= 1e-12 {
                        // Tie: prefer the lowest constraint index.
                        if let Some(b) = blocking {
                            if i < b {
                                blocking = Some(i);
                            }
                        }
                    }
                }
            }
            x += alpha * &p;
            if let Some(b) = blocking {
                working.push(b);
            }
        }
    }

    Ok(SolveReport {
        status: SolveStatus::MaxIter,
        objective: objective(&x),
        solution: x,
        active_set: working,
        iterations: max_iter,
    })
}

/// Solve the equality-constrained KKT system for the given working set.
/// Returns the stationary point and the multipliers of the working rows.
fn solve_kkt(qp: &QuadraticProgram, working: &[usize]) -> Option<(DVector<f64>, DVector<f64>)> {
    let d = qp.dim();
    let k = working.len();
    let n = d + k;
    let mut kkt = DMatrix::zeros(n, n);
    kkt.view_mut((0, 0), (d, d)).copy_from(&qp.hessian);
    for (r, &row) in working.iter().enumerate() {
        for j in 0..d {
            kkt[(d + r, j)] = qp.ineq_matrix[(row, j)];
            kkt[(j, d + r)] = qp.ineq_matrix[(row, j)];
        }
    }
    let mut rhs = DVector::zeros(n);
    for j in 0..d {
        rhs[j] = -qp.gradient[j];
    }
    for (r, &row) in working.iter().enumerate() {
        rhs[d + r] = qp.ineq_rhs[row];
    }
    let sol = kkt.clone().lu().solve(&rhs)?;
    // LU "succeeds" on nearly singular systems; verify the residual.
    let resid = (&kkt * &sol - &rhs).amax();
    if !resid.is_finite() || resid > 1e-7 * (1.0 + rhs.amax()) {
        return None;
    }
    let x = DVector::from_fn(d, |i, _| sol[i]);
    let lambda = DVector::from_fn(k, |i, _| sol[d + i]);
    Some((x, lambda))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn qp(
        h: &[&[f64]],
        g: &[f64],
        rows: &[&[f64]],
        rhs: &[f64],
    ) -> QuadraticProgram {
        let d = g.len();
        let mut hm = DMatrix::zeros(d, d);
        for (i, r) in h.iter().enumerate() {
            for (j, v) in r.iter().enumerate() {
                hm[(i, j)] = *v;
            }
        }
        let mut am = DMatrix::zeros(rows.len(), d);
        for (i, r) in rows.iter().enumerate() {
            for (j, v) in r.iter().enumerate() {
                am[(i, j)] = *v;
            }
        }
        QuadraticProgram {
            hessian: hm,
            gradient: DVector::from_column_slice(g),
            ineq_matrix: am,
            ineq_rhs: DVector::from_column_slice(rhs),
        }
    }

    #[test]
    fn single_active_constraint() {
        // min 0.5 u^2 s.t. u >= 2
        let p = qp(&[&[1.0]], &[0.0], &[&[-1.0]], &[-2.0]);
        let r = solve_qp(&p).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.solution[0] - 2.0).abs() < 1e-9);
        assert_eq!(r.active_set, vec![0]);
    }

    #[test]
    fn unconstrained_minimum() {
        let p = qp(&[&[1.0]], &[0.0], &[], &[]);
        let r = solve_qp(&p).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!(r.solution[0].abs() < 1e-12);
        assert!(r.active_set.is_empty());
    }

    #[test]
    fn symmetric_two_dim() {
        // min 0.5(u1^2+u2^2) s.t. u1+u2 >= 2. KKT enumeration over active
        // subsets gives the unique stationary feasible point (1, 1).
        let p = qp(&[&[1.0, 0.0], &[0.0, 1.0]], &[0.0, 0.0], &[&[-1.0, -1.0]], &[-2.0]);
        let r = solve_qp(&p).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.solution[0] - 1.0).abs() < 1e-9);
        assert!((r.solution[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_rows() {
        // u <= 0 and u >= 1
        let p = qp(&[&[1.0]], &[0.0], &[&[1.0], &[-1.0]], &[0.0, -1.0]);
        let r = solve_qp(&p).unwrap();
        assert_eq!(r.status, SolveStatus::Infeasible);
    }

    #[test]
    fn rejects_indefinite_hessian() {
        let p = qp(&[&[-1.0]], &[0.0], &[], &[]);
        assert!(matches!(solve_qp(&p), Err(OptError::NotPositiveDefinite)));
    }

    /// KKT enumeration oracle: try every subset of constraints as the active
    /// set, solve the equality KKT system, keep primal-feasible points with
    /// nonnegative multipliers, return the best solution.
    pub(crate) fn kkt_enumeration(p: &QuadraticProgram) -> Option<DVector<f64>> {
        let d = p.dim();
        let m = p.ineq_matrix.nrows();
        let mut best: Option<(f64, DVector<f64>)> = None;
        for mask in 0u32..(1 << m) {
            let set: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
            if set.len() > d {
                continue;
            }
            let Some((x, lambda)) = solve_kkt(p, &set) else { continue };
            if lambda.iter().any(|&l| l < -1e-9) {
                continue;
            }
            let ok = (0..m).all(|i| {
                p.ineq_matrix.row(i).transpose().dot(&x) <= p.ineq_rhs[i] + 1e-9
            });
            if !ok {
                continue;
            }
            let obj = 0.5 * (p.hessian.clone() * &x).dot(&x) + p.gradient.dot(&x);
            if best.is_none() || obj < best.as_ref().unwrap().0 {
                best = Some((obj, x));
            }
        }
        best.map(|(_, x)| x)
    }

    #[test]
    fn random_instances_match_kkt_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut solved = 0;
        while solved < 60 {
            let d = rng.random_range(1..=4usize);
            let m = rng.random_range(0..=6usize);
            // SPD Hessian via L L' + eps I.
            let l = DMatrix::from_fn(d, d, |i, j| {
                if j <= i { rng.random_range(-1.0..1.0) } else { 0.0 }
            });
            let h = &l * l.transpose() + DMatrix::identity(d, d) * 0.3;
            let interior = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
            let a = DMatrix::from_fn(m, d, |_, _| rng.random_range(-1.0..1.0));
            let rhs = DVector::from_fn(m, |i, _| {
                a.row(i).transpose().dot(&interior) + rng.random_range(0.01..1.0)
            });
            let p = QuadraticProgram {
                hessian: h,
                gradient: DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0)),
                ineq_matrix: a,
                ineq_rhs: rhs,
            };
            let rep = solve_qp(&p).unwrap();
            assert_eq!(rep.status, SolveStatus::Optimal);
            let oracle = kkt_enumeration(&p).expect("oracle failed on feasible QP");
            assert!(
                (&rep.solution - &oracle).amax() <= 1e-7,
                "active set {:?}: {} vs {}",
                rep.active_set,
                rep.solution,
                oracle
            );
            solved += 1;
        }
    }
}
