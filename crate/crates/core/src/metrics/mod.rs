//! Control contraction metric families and strong-condition verification.
//!
//! A metric family carries the dual metric `W(x, theta_hat)` and its
//! directional derivatives. Verification checks the strong conditions on a
//! state grid crossed with the parameter-box vertices:
//!
//! * C1 (stabilizability): `B_perp' (W A' + A W - Wdot + 2 lambda W) B_perp`
//!   is negative semidefinite, with `Wdot` expanded along the drift
//!   `f - Delta' theta` (input terms drop under C2),
//! * C2 (Killing vector): `d_{b_i} W - W (db_i/dx)' - (db_i/dx) W = 0`.

mod synth;

pub mod shipped;

pub use synth::{synthesize_quadratic_metric, SynthesisError, SynthesisOpts};

use crate::sysmodel::UncertainSystem;
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;
use thiserror::Error;

/// C1 eigenvalue tolerance for a passing report.
pub const TOL_C1: f64 = 1e-6;
/// C2 Frobenius-residual tolerance for a passing report.
pub const TOL_C2: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("dual metric is not symmetric positive definite at x = {at:?}")]
    NotSpd { at: Vec<f64> },
}

type WFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;
type DwFn =
    Arc<dyn Fn(&DVector<f64>, &DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// Parameterized dual metric `W(x, theta_hat)` with directional derivatives
/// and the contraction rate it was designed for.
#[derive(Clone)]
pub struct MetricFamily {
    dim: usize,
    pub lambda: f64,
    pub param_dependent: bool,
    w: WFn,
    dw_dx: DwFn,
    /// Per-state-coordinate intervals on which the family was verified.
    pub verified_region: Option<Vec<(f64, f64)>>,
}

impl MetricFamily {
    pub fn from_parts(
        dim: usize,
        lambda: f64,
        param_dependent: bool,
        w: WFn,
        dw_dx: DwFn,
    ) -> Self {
        Self { dim, lambda, param_dependent, w, dw_dx, verified_region: None }
    }

    /// Constant dual metric.
    pub fn constant(w: DMatrix<f64>, lambda: f64) -> Self {
        let dim = w.nrows();
        let wc = w.clone();
        Self::from_parts(
            dim,
            lambda,
            false,
            Arc::new(move |_, _| wc.clone()),
            Arc::new(move |_, _, _| DMatrix::zeros(dim, dim)),
        )
    }

    /// Polynomial-in-one-coordinate dual metric
    /// `W(x) = sum_k coeffs[k] * x[coord]^k` with symmetric coefficients.
    pub fn polynomial_in_coord(coord: usize, coeffs: Vec<DMatrix<f64>>, lambda: f64) -> Self {
        Self::polynomial_in_coord_clamped(
            coord,
            coeffs,
            lambda,
            (f64::NEG_INFINITY, f64::INFINITY),
        )
    }

    /// Same template with the coordinate saturated to `clamp` before
    /// evaluation. Outside the clamp interval the metric freezes at the
    /// boundary value (derivative zero), which keeps it positive definite
    /// wherever a trajectory strays beyond the certified band.
    pub fn polynomial_in_coord_clamped(
        coord: usize,
        coeffs: Vec<DMatrix<f64>>,
        lambda: f64,
        clamp: (f64, f64),
    ) -> Self {
        assert!(!coeffs.is_empty());
        let dim = coeffs[0].nrows();
        let c1 = coeffs.clone();
        let c2 = coeffs;
        Self::from_parts(
            dim,
            lambda,
            false,
            Arc::new(move |x: &DVector<f64>, _| {
                let s = x[coord].clamp(clamp.0, clamp.1);
                let mut w = c1[0].clone();
                let mut pow = 1.0;
                for ck in c1.iter().skip(1) {
                    pow *= s;
                    w += ck * pow;
                }
                w
            }),
            Arc::new(move |x: &DVector<f64>, _, v: &DVector<f64>| {
                // Only d/dx[coord] is nonzero for this template, and it
                // vanishes where the coordinate is saturated.
                let dim = c2[0].nrows();
                if x[coord] < clamp.0 || x[coord] > clamp.1 {
                    return DMatrix::zeros(dim, dim);
                }
                let s = x[coord];
                let mut dw = DMatrix::zeros(dim, dim);
                let mut pow = 1.0;
                for (k, ck) in c2.iter().enumerate().skip(1) {
                    dw += ck * (k as f64 * pow);
                    pow *= s;
                }
                dw * v[coord]
            }),
        )
    }

    pub fn with_verified_region(mut self, region: Vec<(f64, f64)>) -> Self {
        self.verified_region = Some(region);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Dual metric `W(x, theta_hat)`.
    pub fn eval_w(&self, x: &DVector<f64>, theta_hat: &DVector<f64>) -> DMatrix<f64> {
        (self.w)(x, theta_hat)
    }

    /// Metric `M = W^-1`, via Cholesky so non-SPD duals are caught.
    pub fn eval_m(
        &self,
        x: &DVector<f64>,
        theta_hat: &DVector<f64>,
    ) -> Result<DMatrix<f64>, MetricError> {
        self.eval_w(x, theta_hat)
            .cholesky()
            .map(|c| c.inverse())
            .ok_or_else(|| MetricError::NotSpd { at: x.iter().copied().collect() })
    }

    /// `M(x, theta) v` without forming the inverse (a Cholesky solve on the
    /// dual); the workhorse of the per-step energy evaluations.
    pub fn apply_m(
        &self,
        x: &DVector<f64>,
        theta_hat: &DVector<f64>,
        v: &DVector<f64>,
    ) -> Result<DVector<f64>, MetricError> {
        self.eval_w(x, theta_hat)
            .cholesky()
            .map(|c| c.solve(v))
            .ok_or_else(|| MetricError::NotSpd { at: x.iter().copied().collect() })
    }

    /// Directional derivative `sum_i dW/dx_i v_i`.
    pub fn dw_dx(
        &self,
        x: &DVector<f64>,
        theta_hat: &DVector<f64>,
        direction: &DVector<f64>,
    ) -> DMatrix<f64> {
        (self.dw_dx)(x, theta_hat, direction)
    }

    pub fn in_verified_region(&self, x: &DVector<f64>) -> bool {
        match &self.verified_region {
            None => true,
            Some(region) => region
                .iter()
                .enumerate()
                .all(|(i, (lo, hi))| x[i] >= *lo && x[i] <= *hi),
        }
    }
}

/// Verification outcome over a grid. `violations` lists `(x, theta)` points
/// where either condition failed its tolerance; an SPD failure aborts the
/// sweep and is reported with its point.
#[derive(Debug, Clone)]
pub struct CcmReport {
    pub c1_worst_eig: f64,
    pub c2_worst_residual: f64,
    pub grid_size: usize,
    pub violations: Vec<(DVector<f64>, DVector<f64>)>,
    pub spd_failure: Option<(DVector<f64>, DVector<f64>)>,
    pub tol_c1: f64,
    pub tol_c2: f64,
}

impl CcmReport {
    pub fn pass(&self) -> bool {
        self.spd_failure.is_none()
            && self.c1_worst_eig <= self.tol_c1
            && self.c2_worst_residual <= self.tol_c2
    }
}

/// The projected C1 matrix
/// `B_perp' (W A' + A W - Wdot + 2 lambda W) B_perp` at one point, with
/// `A = df/dx - sum_k theta_k d(Delta row k)/dx` and `Wdot` along the drift
/// `f - Delta' theta` (the input contribution cancels under C2).
pub fn c1_block(
    family: &MetricFamily,
    sys: &UncertainSystem,
    x: &DVector<f64>,
    theta: &DVector<f64>,
) -> DMatrix<f64> {
    let w = family.eval_w(x, theta);
    let mut a = sys.jac_f(x);
    for (k, jd) in sys.jac_delta_rows(x).iter().enumerate() {
        a -= jd * theta[k];
    }
    let drift = sys.f(x) - sys.delta(x).transpose() * theta;
    let wdot = family.dw_dx(x, theta, &drift);
    let b_perp = sys.b_perp(x);
    let aw = &a * &w;
    let inner = &aw + aw.transpose() - wdot + &w * (2.0 * family.lambda);
    b_perp.transpose() * inner * b_perp
}

/// Max-over-inputs Frobenius norm of the C2 (Killing vector) expression.
pub fn c2_residual(
    family: &MetricFamily,
    sys: &UncertainSystem,
    x: &DVector<f64>,
    theta_hat: &DVector<f64>,
) -> f64 {
    let w = family.eval_w(x, theta_hat);
    let b = sys.b(x);
    let jac_b = sys.jac_b_cols(x);
    let mut worst = 0.0f64;
    for (i, jb) in jac_b.iter().enumerate() {
        let dir = b.column(i).into_owned();
        let dbw = family.dw_dx(x, theta_hat, &dir);
        let expr = dbw - &w * jb.transpose() - jb * &w;
        worst = worst.max(expr.norm());
    }
    worst
}

/// Check the strong conditions at every grid state crossed with every
/// parameter vertex. A non-SPD dual metric at any point fails immediately.
pub fn verify_ccm(
    family: &MetricFamily,
    sys: &UncertainSystem,
    grid: &[DVector<f64>],
    theta_vertices: &[DVector<f64>],
) -> CcmReport {
    let mut report = CcmReport {
        c1_worst_eig: f64::NEG_INFINITY,
        c2_worst_residual: 0.0,
        grid_size: grid.len() * theta_vertices.len().max(1),
        violations: Vec::new(),
        spd_failure: None,
        tol_c1: TOL_C1,
        tol_c2: TOL_C2,
    };
    let thetas: Vec<DVector<f64>> = if theta_vertices.is_empty() {
        vec![DVector::zeros(sys.dim_theta)]
    } else {
        theta_vertices.to_vec()
    };
    for x in grid {
        for theta in &thetas {
            if family.eval_w(x, theta).cholesky().is_none() {
                report.spd_failure = Some((x.clone(), theta.clone()));
                return report;
            }
            let block = c1_block(family, sys, x, theta);
            let eig = if block.nrows() == 0 {
                f64::NEG_INFINITY
            } else {
                symmetric_max_eig(&block)
            };
            let c2 = c2_residual(family, sys, x, theta);
            report.c1_worst_eig = report.c1_worst_eig.max(eig);
            report.c2_worst_residual = report.c2_worst_residual.max(c2);
            if eig > TOL_C1 || c2 > TOL_C2 {
                if report.violations.len() < 32 {
                    report.violations.push((x.clone(), theta.clone()));
                }
            }
        }
    }
    report
}

/// Largest eigenvalue of a symmetric matrix (closed form for 1x1 and 2x2).
pub fn symmetric_max_eig(m: &DMatrix<f64>) -> f64 {
    match m.nrows() {
        0 => f64::NEG_INFINITY,
        1 => m[(0, 0)],
        2 => {
            let (a, b, c) = (m[(0, 0)], m[(0, 1)], m[(1, 1)]);
            0.5 * (a + c) + (0.25 * (a - c) * (a - c) + b * b).sqrt()
        }
        _ => m
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(f64::NEG_INFINITY, |acc, &v| acc.max(v)),
    }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn symmetric_min_eig(m: &DMatrix<f64>) -> f64 {
    -symmetric_max_eig(&(-m))
}

/// Rectangular state grid for the 3-state pitch plant: `n x n` samples of
/// `(alpha, q)` with the pitch angle fixed at zero (no dynamics or metric
/// quantity depends on it).
pub fn pitch_grid(alpha_range: (f64, f64), q_range: (f64, f64), n: usize) -> Vec<DVector<f64>> {
    pitch_grid_rect(alpha_range, q_range, n, n)
}

/// Pitch-plant grid with independent sample counts per axis. The conditions
/// are affine in `q` for metrics that do not depend on it, so `n_q = 2`
/// (the interval endpoints) is often enough during synthesis.
pub fn pitch_grid_rect(
    alpha_range: (f64, f64),
    q_range: (f64, f64),
    n_alpha: usize,
    n_q: usize,
) -> Vec<DVector<f64>> {
    // Endpoints are produced exactly so grids line up with interval bounds.
    let lin = |lo: f64, hi: f64, k: usize, n: usize| {
        if n <= 1 || k == 0 {
            lo
        } else if k == n - 1 {
            hi
        } else {
            lo + (hi - lo) * k as f64 / (n - 1) as f64
        }
    };
    let mut out = Vec::with_capacity(n_alpha * n_q);
    for i in 0..n_alpha {
        for j in 0..n_q {
            out.push(DVector::from_column_slice(&[
                0.0,
                lin(alpha_range.0, alpha_range.1, i, n_alpha),
                lin(q_range.0, q_range.1, j, n_q),
            ]));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smid::ParameterBox;
    use crate::sysmodel::pitch_plant;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn v(s: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(s)
    }

    fn spd_quadratic_family() -> MetricFamily {
        // W(alpha) = I*2 + 0.3 alpha S1 + 0.2 alpha^2 S2, SPD on |alpha| <= 1.
        let w0 = DMatrix::identity(3, 3) * 2.0;
        let w1 = DMatrix::from_row_slice(3, 3, &[0.3, 0.1, 0.0, 0.1, -0.2, 0.05, 0.0, 0.05, 0.1]);
        let w2 = DMatrix::from_row_slice(3, 3, &[0.2, 0.0, 0.1, 0.0, 0.15, 0.0, 0.1, 0.0, -0.1]);
        MetricFamily::polynomial_in_coord(1, vec![w0, w1, w2], 0.5)
    }

    #[test]
    fn metric_times_dual_is_identity() {
        let fam = spd_quadratic_family();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..1000 {
            let x = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
            let th = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
            let w = fam.eval_w(&x, &th);
            let m = fam.eval_m(&x, &th).unwrap();
            let prod = m * w;
            let err = (&prod - DMatrix::identity(3, 3)).amax();
            assert!(err < 1e-9, "MW deviates from identity by {err}");
        }
    }

    #[test]
    fn directional_derivative_matches_finite_differences() {
        let fam = spd_quadratic_family();
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        for _ in 0..50 {
            let x = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
            let th = DVector::zeros(2);
            let dir = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
            let analytic = fam.dw_dx(&x, &th, &dir);
            let eps = 1e-6;
            let fd = (fam.eval_w(&(&x + eps * &dir), &th)
                - fam.eval_w(&(&x - eps * &dir), &th))
                / (2.0 * eps);
            let scale = 1.0 + analytic.amax();
            assert!((analytic - fd).amax() / scale < 1e-5);
        }
    }

    #[test]
    fn fully_actuated_scalar_system_passes_vacuously() {
        // xdot = -x + u with B = 1: B_perp is empty, C1 has nothing to
        // check and C2 vanishes for a constant metric.
        let sys = crate::sysmodel::UncertainSystem::from_parts(
            1,
            1,
            1,
            |x: &DVector<f64>| -x,
            |_x| DMatrix::zeros(1, 1),
            |_x| DMatrix::from_element(1, 1, 1.0),
        );
        let fam = MetricFamily::constant(DMatrix::from_element(1, 1, 1.0), 0.5);
        let grid: Vec<_> = (-5..=5).map(|k| v(&[k as f64 / 5.0])).collect();
        let report = verify_ccm(&fam, &sys, &grid, &[v(&[0.0])]);
        assert!(report.pass());
        assert_eq!(report.c1_worst_eig, f64::NEG_INFINITY);
        assert_eq!(report.c2_worst_residual, 0.0);
    }

    #[test]
    fn identity_metric_c1_matches_direct_eigensolve() {
        // Independent oracle: assemble the projected block from the plant
        // Jacobians directly and take the closed-form 2x2 eigenvalue.
        let sys = pitch_plant();
        let fam = MetricFamily::constant(DMatrix::identity(3, 3), 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..20 {
            let x = v(&[0.0, rng.random_range(-0.1..0.9), rng.random_range(-0.2..0.9)]);
            let th = v(&[rng.random_range(0.1..0.8), rng.random_range(-3.0..1.0)]);
            let block = c1_block(&fam, &sys, &x, &th);
            // Oracle path: W = I so the inner matrix is A + A' + 2 lambda I.
            let mut a = sys.jac_f(&x);
            for (k, jd) in sys.jac_delta_rows(&x).iter().enumerate() {
                a -= jd * th[k];
            }
            let inner = &a + a.transpose() + DMatrix::identity(3, 3) * (2.0 * 0.5);
            let bp = sys.b_perp(&x);
            let oracle_block = bp.transpose() * inner * bp;
            let (p, q, r) = (oracle_block[(0, 0)], oracle_block[(0, 1)], oracle_block[(1, 1)]);
            let oracle_eig = 0.5 * (p + r) + (0.25 * (p - r) * (p - r) + q * q).sqrt();
            assert!((block - oracle_block).amax() < 1e-12);
            assert!((symmetric_max_eig(&c1_block(&fam, &sys, &x, &th)) - oracle_eig).abs() < 1e-9);
        }
    }

    #[test]
    fn verification_is_monotone_in_lambda() {
        // A family passing at a larger rate passes at any smaller rate on
        // the same grid.
        let a = DMatrix::from_row_slice(2, 2, &[-2.0, 1.0, 0.0, -3.0]);
        let sys = {
            let a = a.clone();
            crate::sysmodel::UncertainSystem::from_parts(
                2,
                1,
                1,
                move |x: &DVector<f64>| &a * x,
                |_x| DMatrix::zeros(1, 2),
                |_x| DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
            )
        };
        let w = lyapunov_dual(&a, 0.8);
        let grid: Vec<_> =
            (-3..=3).flat_map(|i| (-3..=3).map(move |j| v(&[i as f64, j as f64]))).collect();
        let high = verify_ccm(&MetricFamily::constant(w.clone(), 0.8), &sys, &grid, &[v(&[0.0])]);
        assert!(high.pass(), "reference rate must pass: worst {}", high.c1_worst_eig);
        for lam in [0.6, 0.4, 0.1] {
            let low = verify_ccm(&MetricFamily::constant(w.clone(), lam), &sys, &grid, &[v(&[0.0])]);
            assert!(low.pass(), "smaller rate {lam} must also pass");
            assert!(low.c1_worst_eig <= high.c1_worst_eig + 1e-12);
        }
    }

    /// Dual-metric Lyapunov oracle: solve `(A + lam I) W + W (A + lam I)' = -I`
    /// through the Kronecker system; for Hurwitz `A + lam I` the solution is
    /// SPD and satisfies `W A' + A W + 2 lam W = -I < 0`.
    fn lyapunov_dual(a: &DMatrix<f64>, lam: f64) -> DMatrix<f64> {
        let n = a.nrows();
        let m = a + DMatrix::identity(n, n) * lam;
        let mut kron = DMatrix::zeros(n * n, n * n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    // (M W + W M')_{ij} = sum_k M_ik W_kj + W_ik M_jk
                    kron[(i * n + j, k * n + j)] += m[(i, k)];
                    kron[(i * n + j, i * n + k)] += m[(j, k)];
                }
            }
        }
        let rhs = DVector::from_fn(n * n, |idx, _| if idx / n == idx % n { -1.0 } else { 0.0 });
        let sol = kron.lu().solve(&rhs).expect("lyapunov system solvable");
        DMatrix::from_fn(n, n, |i, j| sol[i * n + j])
    }

    #[test]
    fn c2_residual_zero_for_alpha_only_metric() {
        // Pitch plant: B = e3 constant and W depends on alpha only, so the
        // derivative of W along B vanishes and the residual is exactly zero.
        let sys = pitch_plant();
        let fam = spd_quadratic_family();
        let r = c2_residual(&fam, &sys, &v(&[0.2, 0.4, -0.1]), &v(&[0.2, -1.0]));
        assert_eq!(r, 0.0);
    }

    #[test]
    fn c2_residual_hand_computed_nonzero() {
        // W(x) = diag(1, 1 + x2^2), B = (0, 1)': d_B W = diag(0, 2 x2),
        // the Jacobian terms vanish, so the residual is exactly 2 |x2|.
        let sys = crate::sysmodel::UncertainSystem::from_parts(
            2,
            1,
            1,
            |_x: &DVector<f64>| DVector::zeros(2),
            |_x| DMatrix::zeros(1, 2),
            |_x| DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
        );
        let fam = MetricFamily::from_parts(
            2,
            0.5,
            false,
            Arc::new(|x: &DVector<f64>, _| {
                DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0 + x[1] * x[1]])
            }),
            Arc::new(|x: &DVector<f64>, _, dir: &DVector<f64>| {
                DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 2.0 * x[1]]) * dir[1]
            }),
        );
        for x2 in [-0.7, 0.0, 1.3] {
            let r = c2_residual(&fam, &sys, &v(&[0.0, x2]), &v(&[0.0]));
            assert!((r - 2.0 * x2.abs()).abs() < 1e-9, "x2 = {x2}: {r}");
        }
    }

    #[test]
    fn non_spd_dual_fails_immediately_with_point() {
        let sys = pitch_plant();
        // W loses definiteness as alpha grows.
        let w0 = DMatrix::identity(3, 3);
        let w1 = DMatrix::zeros(3, 3);
        let mut w2 = DMatrix::zeros(3, 3);
        w2[(0, 0)] = -100.0;
        let fam = MetricFamily::polynomial_in_coord(1, vec![w0, w1, w2], 0.5);
        let grid = pitch_grid((-0.5, 0.5), (-0.2, 0.2), 5);
        let report =
            verify_ccm(&fam, &sys, &grid, &ParameterBox::pitch_default().vertices());
        assert!(!report.pass());
        assert!(report.spd_failure.is_some());
    }
}
