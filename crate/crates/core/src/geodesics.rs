//! Chebyshev-pseudospectral geodesics and Riemannian energy.
//!
//! Curves between the desired and current state are represented by Chebyshev
//! coefficients on `s in [0, 1]` with both endpoints pinned by construction;
//! the energy integral is evaluated with Clenshaw-Curtis quadrature and
//! minimized over the interior coefficients by the smooth descent solver.
//! The boundary speeds and the energy feed the tracking controller's
//! stability constraint.

use crate::metrics::{MetricError, MetricFamily};
use crate::optkit::{minimize_smooth, DescentOpts, SolveReport};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeodesicError {
    #[error("metric not positive definite along the curve at s = {s}")]
    MetricNotSpd { s: f64 },
    #[error("curve dimension {curve} does not match metric dimension {metric}")]
    DimensionMismatch { curve: usize, metric: usize },
    #[error("descent failure: {0}")]
    Descent(#[from] crate::optkit::OptError),
}

/// Clenshaw-Curtis quadrature on `[0, 1]`: mapped Chebyshev-Gauss-Lobatto
/// nodes with interpolatory weights, computed once by solving the Chebyshev
/// moment system. Exact for polynomials of degree below the node count.
#[derive(Debug, Clone)]
pub struct Quadrature {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Quadrature {
    pub fn clenshaw_curtis(node_count: usize) -> Self {
        assert!(node_count >= 2);
        let n = node_count - 1;
        // CGL points on [-1, 1], ordered so the mapped s runs 0 -> 1.
        let t: Vec<f64> = (0..=n)
            .map(|k| -(std::f64::consts::PI * k as f64 / n as f64).cos())
            .collect();
        // Interpolatory weights solve V' w = m with V_{kj} = T_j(t_k) and
        // moments m_j = 2 / (1 - j^2) for even j, 0 for odd j.
        let mut vt = DMatrix::zeros(node_count, node_count);
        for (k, &tk) in t.iter().enumerate() {
            let vals = chebyshev_values(n, tk);
            for j in 0..node_count {
                vt[(j, k)] = vals[j];
            }
        }
        let moments = DVector::from_fn(node_count, |j, _| {
            if j % 2 == 0 {
                2.0 / (1.0 - (j * j) as f64)
            } else {
                0.0
            }
        });
        let w = vt.lu().solve(&moments).expect("chebyshev moment system is well conditioned");
        // Map [-1, 1] -> [0, 1]: nodes shift and scale, weights halve.
        Quadrature {
            nodes: t.iter().map(|&v| 0.5 * (v + 1.0)).collect(),
            weights: w.iter().map(|&v| 0.5 * v).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// `T_j(t)` for `j = 0..=degree`.
pub fn chebyshev_values(degree: usize, t: f64) -> DVector<f64> {
    let mut v = DVector::zeros(degree + 1);
    v[0] = 1.0;
    if degree >= 1 {
        v[1] = t;
    }
    for j in 2..=degree {
        v[j] = 2.0 * t * v[j - 1] - v[j - 2];
    }
    v
}

/// `T_j'(t) = j U_{j-1}(t)` for `j = 0..=degree`.
pub fn chebyshev_derivatives(degree: usize, t: f64) -> DVector<f64> {
    let mut d = DVector::zeros(degree + 1);
    if degree == 0 {
        return d;
    }
    let mut u = vec![0.0; degree];
    u[0] = 1.0;
    if degree >= 2 {
        u[1] = 2.0 * t;
    }
    for j in 2..degree {
        u[j] = 2.0 * t * u[j - 1] - u[j - 2];
    }
    for j in 1..=degree {
        d[j] = j as f64 * u[j - 1];
    }
    d
}

/// Chebyshev-coefficient curve `c(s) = sum_j a_j T_j(2s - 1)` with column
/// coefficients `a_j` in state space.
#[derive(Debug, Clone)]
pub struct ChebCurve {
    /// `dim x (degree + 1)` coefficient matrix.
    pub coeffs: DMatrix<f64>,
}

impl ChebCurve {
    pub fn dim(&self) -> usize {
        self.coeffs.nrows()
    }
    pub fn degree(&self) -> usize {
        self.coeffs.ncols() - 1
    }

    /// Straight segment from `from` (s = 0) to `to` (s = 1).
    pub fn line(from: &DVector<f64>, to: &DVector<f64>, degree: usize) -> Self {
        let dim = from.len();
        let mut coeffs = DMatrix::zeros(dim, degree + 1);
        coeffs.set_column(0, &((to + from) * 0.5));
        if degree >= 1 {
            coeffs.set_column(1, &((to - from) * 0.5));
        }
        ChebCurve { coeffs }
    }

    pub fn eval(&self, s: f64) -> DVector<f64> {
        let basis = chebyshev_values(self.degree(), 2.0 * s - 1.0);
        &self.coeffs * basis
    }

    /// Curve speed `dc/ds` (the chain-rule factor 2 included).
    pub fn speed(&self, s: f64) -> DVector<f64> {
        let dbasis = chebyshev_derivatives(self.degree(), 2.0 * s - 1.0);
        (&self.coeffs * dbasis) * 2.0
    }

    pub fn start(&self) -> DVector<f64> {
        self.eval(0.0)
    }
    pub fn end(&self) -> DVector<f64> {
        self.eval(1.0)
    }
}

/// Geodesic solve output: the curve, its energy, and the boundary speeds
/// entering the stability constraint.
#[derive(Debug, Clone)]
pub struct GeodesicResult {
    pub curve: ChebCurve,
    pub energy: f64,
    pub gamma_s0: DVector<f64>,
    pub gamma_s1: DVector<f64>,
    /// Set when the optimizer failed and the linear initialization was kept;
    /// its energy upper-bounds the geodesic energy, so downstream use stays
    /// conservative.
    pub fallback_linear: bool,
    /// Set when an endpoint lies outside the metric's verified region.
    pub outside_verified_region: bool,
    pub solver: Option<SolveReport>,
}

#[derive(Debug, Clone, Copy)]
pub struct GeodesicOpts {
    /// Chebyshev degree of the curve.
    pub degree: usize,
    /// Clenshaw-Curtis node count.
    pub quad_nodes: usize,
    pub max_iter: usize,
    pub grad_tol: f64,
}

impl Default for GeodesicOpts {
    fn default() -> Self {
        Self { degree: 6, quad_nodes: 13, max_iter: 40, grad_tol: 1e-6 }
    }
}

/// Riemannian energy of a curve under a metric family:
/// `sum_k w_k c_s(s_k)' M(c(s_k), theta) c_s(s_k)`.
pub fn energy(
    curve: &ChebCurve,
    metric: &MetricFamily,
    theta_hat: &DVector<f64>,
    quad: &Quadrature,
) -> Result<f64, GeodesicError> {
    if curve.dim() != metric.dim() {
        return Err(GeodesicError::DimensionMismatch { curve: curve.dim(), metric: metric.dim() });
    }
    let mut total = 0.0;
    for (&s, &w) in quad.nodes.iter().zip(&quad.weights) {
        let x = curve.eval(s);
        let cs = curve.speed(s);
        let mcs = metric
            .apply_m(&x, theta_hat, &cs)
            .map_err(|MetricError::NotSpd { .. }| GeodesicError::MetricNotSpd { s })?;
        total += w * mcs.dot(&cs);
    }
    Ok(total)
}

/// Precomputed basis tables for the geodesic solve: values and speed values
/// of every Chebyshev mode at every quadrature node. Built once, reused
/// across control steps.
#[derive(Debug, Clone)]
pub struct GeodesicWorkspace {
    pub opts: GeodesicOpts,
    pub quad: Quadrature,
    basis: DMatrix<f64>,
    dbasis: DMatrix<f64>,
}

impl GeodesicWorkspace {
    pub fn new(opts: GeodesicOpts) -> Self {
        let quad = Quadrature::clenshaw_curtis(opts.quad_nodes);
        let mut basis = DMatrix::zeros(opts.degree + 1, quad.len());
        let mut dbasis = DMatrix::zeros(opts.degree + 1, quad.len());
        for (k, &s) in quad.nodes.iter().enumerate() {
            let t = 2.0 * s - 1.0;
            basis.set_column(k, &chebyshev_values(opts.degree, t));
            dbasis.set_column(k, &(chebyshev_derivatives(opts.degree, t) * 2.0));
        }
        Self { opts, quad, basis, dbasis }
    }
}

impl Default for GeodesicWorkspace {
    fn default() -> Self {
        Self::new(GeodesicOpts::default())
    }
}

/// Solve the geodesic NLP between `x_d` (s = 0) and `x` (s = 1).
///
/// The descent starts from the straight segment and runs over interior
/// coefficients only; the first two coefficient columns are recovered from
/// the endpoint interpolation conditions, so the boundary values are exact
/// at every iterate. On optimizer failure the straight segment is returned
/// with `fallback_linear` set.
pub fn solve_geodesic(
    x: &DVector<f64>,
    x_d: &DVector<f64>,
    metric: &MetricFamily,
    theta_hat: &DVector<f64>,
    ws: &GeodesicWorkspace,
) -> Result<GeodesicResult, GeodesicError> {
    let dim = x.len();
    if dim != metric.dim() {
        return Err(GeodesicError::DimensionMismatch { curve: dim, metric: metric.dim() });
    }
    let degree = ws.opts.degree;
    let outside = !(metric.in_verified_region(x) && metric.in_verified_region(x_d));
    let line = ChebCurve::line(x_d, x, degree);
    let line_energy = energy_tabulated(&line.coeffs, metric, theta_hat, ws)?;

    if (x - x_d).amax() <= 1e-9 {
        return Ok(GeodesicResult {
            gamma_s0: DVector::zeros(dim),
            gamma_s1: DVector::zeros(dim),
            curve: line,
            energy: 0.0,
            fallback_linear: false,
            outside_verified_region: outside,
            solver: None,
        });
    }
    if degree < 2 {
        let gamma_s0 = line.speed(0.0);
        let gamma_s1 = line.speed(1.0);
        return Ok(GeodesicResult {
            curve: line,
            energy: line_energy,
            gamma_s0,
            gamma_s1,
            fallback_linear: false,
            outside_verified_region: outside,
            solver: None,
        });
    }

    // Interior coefficients are preconditioned by their mode index: mode j
    // enters the energy with O(j^2) stiffness, and the rescaling keeps the
    // descent well conditioned.
    let n_free = (degree - 1) * dim;
    let scale: Vec<f64> = (2..=degree).map(|j| 1.0 / j as f64).collect();
    let pack = |free: &DVector<f64>| -> DMatrix<f64> {
        let mut coeffs = DMatrix::zeros(dim, degree + 1);
        let mut even_sum = DVector::zeros(dim);
        let mut odd_sum = DVector::zeros(dim);
        for j in 2..=degree {
            for i in 0..dim {
                coeffs[(i, j)] = free[(j - 2) * dim + i] * scale[j - 2];
            }
            let col = coeffs.column(j).into_owned();
            if j % 2 == 0 {
                even_sum += col;
            } else {
                odd_sum += col;
            }
        }
        // Endpoint interpolation fixes the first two columns:
        // sum of even modes = (x + x_d)/2, sum of odd modes = (x - x_d)/2.
        coeffs.set_column(0, &((x + x_d) * 0.5 - even_sum));
        coeffs.set_column(1, &((x - x_d) * 0.5 - odd_sum));
        coeffs
    };

    let objective = |free: &DVector<f64>| -> f64 {
        energy_tabulated(&pack(free), metric, theta_hat, ws).unwrap_or(f64::NAN)
    };
    let gradient = |free: &DVector<f64>| -> DVector<f64> {
        match energy_gradient_tabulated(&pack(free), metric, theta_hat, ws) {
            Ok(full) => {
                // Chain rule through the pinned columns and preconditioner.
                let g0 = full.column(0).into_owned();
                let g1 = full.column(1).into_owned();
                let mut g = DVector::zeros(n_free);
                for j in 2..=degree {
                    let pinned = if j % 2 == 0 { &g0 } else { &g1 };
                    for i in 0..dim {
                        g[(j - 2) * dim + i] = (full[(i, j)] - pinned[i]) * scale[j - 2];
                    }
                }
                g
            }
            Err(_) => DVector::from_element(n_free, f64::NAN),
        }
    };

    let report = minimize_smooth(
        objective,
        gradient,
        DVector::zeros(n_free),
        DescentOpts { max_iter: ws.opts.max_iter, grad_tol: ws.opts.grad_tol },
    );

    match report {
        Ok(rep) if rep.objective.is_finite() && rep.objective <= line_energy + 1e-12 => {
            let curve = ChebCurve { coeffs: pack(&rep.solution) };
            let gamma_s0 = curve.speed(0.0);
            let gamma_s1 = curve.speed(1.0);
            Ok(GeodesicResult {
                energy: rep.objective,
                gamma_s0,
                gamma_s1,
                curve,
                fallback_linear: false,
                outside_verified_region: outside,
                solver: Some(rep),
            })
        }
        _ => {
            let gamma_s0 = line.speed(0.0);
            let gamma_s1 = line.speed(1.0);
            Ok(GeodesicResult {
                curve: line,
                energy: line_energy,
                gamma_s0,
                gamma_s1,
                fallback_linear: true,
                outside_verified_region: outside,
                solver: None,
            })
        }
    }
}

/// First-variation left-hand side of the stability constraint:
/// `gamma_s(1)' M(x, theta) xdot_hat - gamma_s(0)' M(x_d, theta) xdot_d`.
/// Affine in the input through `xdot_hat`.
pub fn energy_rate_lhs(
    result: &GeodesicResult,
    metric: &MetricFamily,
    theta_hat: &DVector<f64>,
    xdot_hat: &DVector<f64>,
    xdot_d: &DVector<f64>,
) -> Result<f64, GeodesicError> {
    let x = result.curve.end();
    let x_d = result.curve.start();
    let m_xdot = metric
        .apply_m(&x, theta_hat, xdot_hat)
        .map_err(|_| GeodesicError::MetricNotSpd { s: 1.0 })?;
    let m_xdot_d = metric
        .apply_m(&x_d, theta_hat, xdot_d)
        .map_err(|_| GeodesicError::MetricNotSpd { s: 0.0 })?;
    Ok(m_xdot.dot(&result.gamma_s1) - m_xdot_d.dot(&result.gamma_s0))
}

fn energy_tabulated(
    coeffs: &DMatrix<f64>,
    metric: &MetricFamily,
    theta_hat: &DVector<f64>,
    ws: &GeodesicWorkspace,
) -> Result<f64, GeodesicError> {
    let mut total = 0.0;
    for k in 0..ws.quad.len() {
        let x = coeffs * ws.basis.column(k);
        let cs = coeffs * ws.dbasis.column(k);
        let mcs = metric
            .apply_m(&x, theta_hat, &cs)
            .map_err(|_| GeodesicError::MetricNotSpd { s: ws.quad.nodes[k] })?;
        total += ws.quad.weights[k] * mcs.dot(&cs);
    }
    Ok(total)
}

/// Gradient of the tabulated energy in every coefficient, including the
/// metric's state dependence: per node,
/// `d/da_{ij} = w_k [2 dT_j (M c_s)_i + T_j c_s' dM/dx_i c_s]` with
/// `dM/dx_i = -M (dW/dx_i) M`.
fn energy_gradient_tabulated(
    coeffs: &DMatrix<f64>,
    metric: &MetricFamily,
    theta_hat: &DVector<f64>,
    ws: &GeodesicWorkspace,
) -> Result<DMatrix<f64>, GeodesicError> {
    let dim = coeffs.nrows();
    let modes = coeffs.ncols();
    let mut grad = DMatrix::zeros(dim, modes);
    let mut unit = DVector::zeros(dim);
    for k in 0..ws.quad.len() {
        let w = ws.quad.weights[k];
        let x = coeffs * ws.basis.column(k);
        let cs = coeffs * ws.dbasis.column(k);
        let mcs = metric
            .apply_m(&x, theta_hat, &cs)
            .map_err(|_| GeodesicError::MetricNotSpd { s: ws.quad.nodes[k] })?;
        let mut metric_terms = DVector::zeros(dim);
        for i in 0..dim {
            unit.fill(0.0);
            unit[i] = 1.0;
            let dw = metric.dw_dx(&x, theta_hat, &unit);
            if dw.amax() > 0.0 {
                // dM = -M dW M, so c_s' dM c_s = -(M c_s)' dW (M c_s).
                metric_terms[i] = -(&dw * &mcs).dot(&mcs);
            }
        }
        for j in 0..modes {
            let tj = ws.basis[(j, k)];
            let dtj = ws.dbasis[(j, k)];
            for i in 0..dim {
                grad[(i, j)] += w * (2.0 * dtj * mcs[i] + tj * metric_terms[i]);
            }
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn v(s: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(s)
    }

    #[test]
    fn quadrature_weights_sum_to_interval_length() {
        for k in [5, 9, 13, 21] {
            let q = Quadrature::clenshaw_curtis(k);
            let sum: f64 = q.weights.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12, "K = {k}: {sum}");
        }
    }

    #[test]
    fn quadrature_exact_on_monomials() {
        let q = Quadrature::clenshaw_curtis(13);
        for d in 0..13 {
            let integral: f64 =
                q.nodes.iter().zip(&q.weights).map(|(&s, &w)| w * s.powi(d as i32)).sum();
            let exact = 1.0 / (d as f64 + 1.0);
            assert!((integral - exact).abs() < 1e-10, "degree {d}: {integral} vs {exact}");
        }
    }

    #[test]
    fn euclidean_energy_of_a_straight_line() {
        let quad = Quadrature::clenshaw_curtis(13);
        let metric = MetricFamily::constant(DMatrix::identity(2, 2), 0.5);
        let line = ChebCurve::line(&v(&[0.0, 0.0]), &v(&[1.0, 0.0]), 6);
        let e = energy(&line, &metric, &v(&[0.0]), &quad).unwrap();
        assert!((e - 1.0).abs() < 1e-12);
        // W = I/4 means M = 4I: the energy scales linearly with the metric.
        let metric4 = MetricFamily::constant(DMatrix::identity(2, 2) * 0.25, 0.5);
        let e4 = energy(&line, &metric4, &v(&[0.0]), &quad).unwrap();
        assert!((e4 - 4.0).abs() < 1e-12);
    }

    #[test]
    fn quadratic_detour_energy_matches_analytic_integral() {
        // c(s) = (s, s(1 - s)): E = int_0^1 (1 + (1 - 2s)^2) ds = 4/3 under
        // M = I. On t = 2s - 1 the detour reads (1 - t^2)/4 = (1 - T_2)/8.
        let mut coeffs = DMatrix::zeros(2, 7);
        coeffs[(0, 0)] = 0.5;
        coeffs[(0, 1)] = 0.5;
        coeffs[(1, 0)] = 1.0 / 8.0;
        coeffs[(1, 2)] = -1.0 / 8.0;
        let curve = ChebCurve { coeffs };
        assert!((curve.eval(0.5) - v(&[0.5, 0.25])).amax() < 1e-14);
        let quad = Quadrature::clenshaw_curtis(13);
        let metric = MetricFamily::constant(DMatrix::identity(2, 2), 0.5);
        let e = energy(&curve, &metric, &v(&[0.0]), &quad).unwrap();
        assert!((e - 4.0 / 3.0).abs() < 1e-12, "{e}");
    }

    #[test]
    fn line_endpoints_interpolate_exactly() {
        let a = v(&[0.3, -1.2, 2.0]);
        let b = v(&[-0.7, 0.4, 1.0]);
        let line = ChebCurve::line(&a, &b, 6);
        assert!((line.start() - &a).amax() < 1e-12);
        assert!((line.end() - &b).amax() < 1e-12);
    }

    fn toy_metric() -> MetricFamily {
        // Dual W = diag(1, 1/(1 + x0^2)), i.e. M = diag(1, 1 + x0^2):
        // detours through small |x0| are cheaper for the second coordinate.
        MetricFamily::from_parts(
            2,
            0.5,
            false,
            Arc::new(|x: &DVector<f64>, _| {
                DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0 / (1.0 + x[0] * x[0])])
            }),
            Arc::new(|x: &DVector<f64>, _, dir: &DVector<f64>| {
                let d = -2.0 * x[0] / (1.0 + x[0] * x[0]).powi(2);
                DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, d]) * dir[0]
            }),
        )
    }

    #[test]
    fn energy_gradient_matches_finite_differences() {
        let ws = GeodesicWorkspace::default();
        let metric = toy_metric();
        let th = v(&[0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..10 {
            let coeffs = DMatrix::from_fn(2, 7, |_, _| rng.random_range(-0.5..0.5));
            let analytic = energy_gradient_tabulated(&coeffs, &metric, &th, &ws).unwrap();
            let mut fd = DMatrix::zeros(2, 7);
            let eps = 1e-6;
            for i in 0..2 {
                for j in 0..7 {
                    let mut cp = coeffs.clone();
                    let mut cm = coeffs.clone();
                    cp[(i, j)] += eps;
                    cm[(i, j)] -= eps;
                    fd[(i, j)] = (energy_tabulated(&cp, &metric, &th, &ws).unwrap()
                        - energy_tabulated(&cm, &metric, &th, &ws).unwrap())
                        / (2.0 * eps);
                }
            }
            let scale = 1.0 + analytic.amax();
            assert!((&analytic - &fd).amax() / scale < 1e-5, "mismatch:\n{analytic}\nvs\n{fd}");
        }
    }

    #[test]
    fn constant_metric_geodesic_is_the_straight_line() {
        let ws = GeodesicWorkspace::default();
        let w = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let metric = MetricFamily::constant(w, 0.5);
        let th = v(&[0.0]);
        let x_d = v(&[0.1, -0.4]);
        let x = v(&[1.3, 0.8]);
        let res = solve_geodesic(&x, &x_d, &metric, &th, &ws).unwrap();
        let line = ChebCurve::line(&x_d, &x, ws.opts.degree);
        let line_energy = energy(&line, &metric, &th, &ws.quad).unwrap();
        assert!(!res.fallback_linear);
        assert!((res.energy - line_energy).abs() < 1e-8);
    }

    #[test]
    fn coincident_endpoints_give_zero_energy() {
        let ws = GeodesicWorkspace::default();
        let metric = toy_metric();
        let x = v(&[0.7, -0.2]);
        let res = solve_geodesic(&x, &x.clone(), &metric, &v(&[0.0]), &ws).unwrap();
        assert_eq!(res.energy, 0.0);
        assert_eq!(res.gamma_s0.amax(), 0.0);
        assert_eq!(res.gamma_s1.amax(), 0.0);
    }

    /// Shooting oracle for the toy metric: integrate the geodesic ODE with
    /// the Christoffel symbols of M = diag(1, 1 + x0^2), Newton-correct the
    /// unknown initial velocity to hit the target, and use the constant
    /// geodesic speed to get the energy.
    fn shoot_energy(x_d: &DVector<f64>, x: &DVector<f64>) -> f64 {
        let m2 = |x0: f64| 1.0 + x0 * x0;
        let dm2 = |x0: f64| 2.0 * x0;
        // Nonzero Christoffel symbols of diag(1, m2(x0)):
        // G^0_11 = -m2'/2, G^1_01 = G^1_10 = m2'/(2 m2).
        let accel = |pos: &DVector<f64>, vel: &DVector<f64>| {
            let g011 = -0.5 * dm2(pos[0]);
            let g101 = 0.5 * dm2(pos[0]) / m2(pos[0]);
            v(&[-g011 * vel[1] * vel[1], -2.0 * g101 * vel[0] * vel[1]])
        };
        let integrate = |v0: &DVector<f64>| {
            let steps = 2000;
            let h = 1.0 / steps as f64;
            let mut p = x_d.clone();
            let mut vel = v0.clone();
            for _ in 0..steps {
                let k1p = vel.clone();
                let k1v = accel(&p, &vel);
                let k2p = &vel + &k1v * (h / 2.0);
                let k2v = accel(&(&p + &k1p * (h / 2.0)), &k2p);
                let k3p = &vel + &k2v * (h / 2.0);
                let k3v = accel(&(&p + &k2p * (h / 2.0)), &k3p);
                let k4p = &vel + &k3v * h;
                let k4v = accel(&(&p + &k3p * h), &k4p);
                p += (k1p + &k2p * 2.0 + &k3p * 2.0 + k4p) * (h / 6.0);
                vel += (k1v + &k2v * 2.0 + &k3v * 2.0 + k4v) * (h / 6.0);
            }
            p
        };
        let mut v0 = x - x_d;
        for _ in 0..40 {
            let endp = integrate(&v0);
            let err = &endp - x;
            if err.amax() < 1e-11 {
                break;
            }
            let eps = 1e-7;
            let mut jac = DMatrix::zeros(2, 2);
            for j in 0..2 {
                let mut vp = v0.clone();
                vp[j] += eps;
                jac.set_column(j, &((integrate(&vp) - &endp) / eps));
            }
            v0 -= jac.lu().solve(&err).expect("shooting jacobian invertible");
        }
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, m2(x_d[0])]);
        (&m * &v0).dot(&v0)
    }

    #[test]
    fn curved_metric_beats_the_straight_line_and_matches_shooting() {
        let ws = GeodesicWorkspace::new(GeodesicOpts {
            degree: 6,
            quad_nodes: 13,
            max_iter: 4000,
            grad_tol: 1e-9,
        });
        let metric = toy_metric();
        let th = v(&[0.0]);
        let x_d = v(&[-1.0, 0.0]);
        let x = v(&[1.0, 1.2]);
        let res = solve_geodesic(&x, &x_d, &metric, &th, &ws).unwrap();
        let line = ChebCurve::line(&x_d, &x, 6);
        let line_energy = energy(&line, &metric, &th, &ws.quad).unwrap();
        assert!(res.energy < line_energy - 1e-3, "{} !< {}", res.energy, line_energy);
        let oracle = shoot_energy(&x_d, &x);
        assert!(
            (res.energy - oracle).abs() < 1e-3 * (1.0 + oracle),
            "solver {} vs shooting {}",
            res.energy,
            oracle
        );
    }

    #[test]
    fn resolve_between_fixed_endpoints_is_consistent() {
        // The solved energy between fixed endpoints must agree across
        // repeated solves (the in-between solve perturbs nothing shared).
        let ws = GeodesicWorkspace::new(GeodesicOpts {
            degree: 6,
            quad_nodes: 13,
            max_iter: 4000,
            grad_tol: 1e-9,
        });
        let metric = toy_metric();
        let th = v(&[0.0]);
        let x_d = v(&[-0.8, 0.1]);
        let x = v(&[0.9, 0.7]);
        let base = solve_geodesic(&x, &x_d, &metric, &th, &ws).unwrap();
        let _detour = solve_geodesic(&x, &v(&[0.05, 0.4]), &metric, &th, &ws).unwrap();
        let again = solve_geodesic(&x, &x_d, &metric, &th, &ws).unwrap();
        assert!((base.energy - again.energy).abs() < 1e-6);
    }

    #[test]
    fn energy_rate_lhs_cases() {
        let ws = GeodesicWorkspace::default();
        let metric = MetricFamily::constant(DMatrix::identity(2, 2), 0.5);
        let th = v(&[0.0]);
        // Coincident endpoints: both speeds vanish, so the rate is zero and
        // the stability constraint reads 0 <= -lambda E + slack.
        let x = v(&[0.4, -0.1]);
        let res = solve_geodesic(&x, &x.clone(), &metric, &th, &ws).unwrap();
        let rate = energy_rate_lhs(&res, &metric, &th, &v(&[1.0, 2.0]), &v(&[0.0, 0.0])).unwrap();
        assert_eq!(rate, 0.0);
        // Straight line from the origin under M = I with xdot_d = 0:
        // gamma_s(1) = x, so the rate is x . xdot_hat.
        let origin = v(&[0.0, 0.0]);
        let res = solve_geodesic(&x, &origin, &metric, &th, &ws).unwrap();
        let xdot = v(&[0.7, -0.3]);
        let rate = energy_rate_lhs(&res, &metric, &th, &xdot, &v(&[0.0, 0.0])).unwrap();
        assert!((rate - x.dot(&xdot)).abs() < 1e-7);
        // Static state: zero rate on the left-hand side.
        let rate0 = energy_rate_lhs(&res, &metric, &th, &v(&[0.0, 0.0]), &v(&[0.0, 0.0])).unwrap();
        assert_eq!(rate0, 0.0);
    }

    #[test]
    fn solver_never_returns_more_than_linear_energy() {
        // Even with the iteration budget strangled, the fallback keeps the
        // returned energy a valid upper bound.
        let ws = GeodesicWorkspace::new(GeodesicOpts { max_iter: 3, ..Default::default() });
        let metric = toy_metric();
        let th = v(&[0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..20 {
            let x_d = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
            let x = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
            let res = solve_geodesic(&x, &x_d, &metric, &th, &ws).unwrap();
            let line = ChebCurve::line(&x_d, &x, ws.opts.degree);
            let le = energy(&line, &metric, &th, &ws.quad).unwrap();
            assert!(res.energy <= le + 1e-9);
        }
    }

    #[test]
    fn verified_region_warning_flag() {
        let ws = GeodesicWorkspace::default();
        let metric = MetricFamily::constant(DMatrix::identity(2, 2), 0.5)
            .with_verified_region(vec![(-1.0, 1.0), (-1.0, 1.0)]);
        let inside =
            solve_geodesic(&v(&[0.5, 0.5]), &v(&[0.0, 0.0]), &metric, &v(&[0.0]), &ws).unwrap();
        assert!(!inside.outside_verified_region);
        let outside =
            solve_geodesic(&v(&[2.0, 0.0]), &v(&[0.0, 0.0]), &metric, &v(&[0.0]), &ws).unwrap();
        assert!(outside.outside_verified_region);
    }
}
