//! Uncertain nonlinear system representation, desired-trajectory generation,
//! and fixed-step closed-loop simulation.
//!
//! Systems have the structure `xdot = f(x) - Delta(x)' theta + B(x) u` with
//! unknown parameters `theta`. All internal quantities are in radians and
//! radians per second; degree conversion happens at CLI boundaries only.

mod pitch;

pub use pitch::{example1_system, pitch_plant, PitchPlant, EXAMPLE1_THETA_BOUNDS, PITCH_PARAM_BOUNDS};

use nalgebra::{DMatrix, DVector};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("non-finite {what} at t = {t}")]
    NonFinite { what: &'static str, t: f64 },
    #[error("controller failed at t = {t}: {message}")]
    Controller { t: f64, message: String },
    #[error("invalid simulation setup: {0}")]
    BadSetup(String),
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
}

type VecFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
type MatFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
type MatListFn = Arc<dyn Fn(&DVector<f64>) -> Vec<DMatrix<f64>> + Send + Sync>;

/// Callable bundle defining `xdot = f(x) - Delta(x)' theta + B(x) u`.
///
/// `b_perp` spans the left annihilator of `B` (`B_perp' B = 0`); a
/// Gram-Schmidt nullspace fallback is installed when no closed form is
/// supplied. Jacobian callbacks must match finite differences of the
/// corresponding fields (checked in tests).
#[derive(Clone)]
pub struct UncertainSystem {
    pub dim_x: usize,
    pub dim_u: usize,
    pub dim_theta: usize,
    f: VecFn,
    delta: MatFn,
    b: MatFn,
    b_perp: MatFn,
    jac_f: MatFn,
    jac_delta_rows: MatListFn,
    jac_b_cols: MatListFn,
}

impl UncertainSystem {
    /// Build a system from closures, deriving `b_perp` and all Jacobians
    /// numerically. Convenient for small test systems; production plants
    /// supply analytic callbacks through the struct fields directly.
    pub fn from_parts(
        dim_x: usize,
        dim_u: usize,
        dim_theta: usize,
        f: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        delta: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
        b: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        let f: VecFn = Arc::new(f);
        let delta: MatFn = Arc::new(delta);
        let b: MatFn = Arc::new(b);
        let b_perp = {
            let b = b.clone();
            Arc::new(move |x: &DVector<f64>| nullspace_of_transpose(&b(x)))
        };
        let jac_f = {
            let f = f.clone();
            Arc::new(move |x: &DVector<f64>| numeric_jacobian(&*f, x))
        };
        let jac_delta_rows = {
            let delta = delta.clone();
            Arc::new(move |x: &DVector<f64>| {
                let p = delta(x).nrows();
                (0..p)
                    .map(|k| {
                        let delta = delta.clone();
                        numeric_jacobian(
                            move |y: &DVector<f64>| delta(y).row(k).transpose().into_owned(),
                            x,
                        )
                    })
                    .collect()
            })
        };
        let jac_b_cols = {
            let b = b.clone();
            Arc::new(move |x: &DVector<f64>| {
                let m = b(x).ncols();
                (0..m)
                    .map(|i| {
                        let b = b.clone();
                        numeric_jacobian(move |y: &DVector<f64>| b(y).column(i).into_owned(), x)
                    })
                    .collect()
            })
        };
        Self { dim_x, dim_u, dim_theta, f, delta, b, b_perp, jac_f, jac_delta_rows, jac_b_cols }
    }

    /// Same as [`from_parts`](Self::from_parts) but with analytic Jacobians
    /// and annihilator.
    #[allow(clippy::too_many_arguments)]
    pub fn with_jacobians(
        dim_x: usize,
        dim_u: usize,
        dim_theta: usize,
        f: VecFn,
        delta: MatFn,
        b: MatFn,
        b_perp: MatFn,
        jac_f: MatFn,
        jac_delta_rows: MatListFn,
        jac_b_cols: MatListFn,
    ) -> Self {
        Self { dim_x, dim_u, dim_theta, f, delta, b, b_perp, jac_f, jac_delta_rows, jac_b_cols }
    }

    pub fn f(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.f)(x)
    }
    pub fn delta(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.delta)(x)
    }
    pub fn b(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.b)(x)
    }
    pub fn b_perp(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.b_perp)(x)
    }
    pub fn jac_f(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.jac_f)(x)
    }
    pub fn jac_delta_rows(&self, x: &DVector<f64>) -> Vec<DMatrix<f64>> {
        (self.jac_delta_rows)(x)
    }
    pub fn jac_b_cols(&self, x: &DVector<f64>) -> Vec<DMatrix<f64>> {
        (self.jac_b_cols)(x)
    }
}

/// Central-difference Jacobian of a vector field.
pub fn numeric_jacobian(
    f: impl Fn(&DVector<f64>) -> DVector<f64>,
    x: &DVector<f64>,
) -> DMatrix<f64> {
    let n = x.len();
    let fx = f(x);
    let mut jac = DMatrix::zeros(fx.len(), n);
    for j in 0..n {
        let h = 1e-6 * (1.0 + x[j].abs());
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        let col = (f(&xp) - f(&xm)) / (2.0 * h);
        jac.set_column(j, &col);
    }
    jac
}

/// Orthonormal basis of the nullspace of `B'` via Gram-Schmidt against the
/// columns of `B`, so that `B_perp' B = 0`.
pub fn nullspace_of_transpose(b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = b.nrows();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    // Orthonormalize the columns of B first.
    let mut b_ortho: Vec<DVector<f64>> = Vec::new();
    for j in 0..b.ncols() {
        let mut v = b.column(j).into_owned();
        for u in &b_ortho {
            let proj = u.dot(&v);
            v -= proj * u;
        }
        let norm = v.norm();
        if norm > 1e-12 {
            b_ortho.push(v / norm);
        }
    }
    for j in 0..n {
        let mut v = DVector::zeros(n);
        v[j] = 1.0;
        for u in b_ortho.iter().chain(basis.iter()) {
            let proj = u.dot(&v);
            v -= proj * u;
        }
        let norm = v.norm();
        if norm > 1e-10 {
            basis.push(v / norm);
        }
    }
    let mut out = DMatrix::zeros(n, basis.len());
    for (j, v) in basis.iter().enumerate() {
        out.set_column(j, v);
    }
    out
}

/// Evaluate `xdot = f(x) - Delta(x)' theta + B(x) u`.
pub fn eval_dynamics(
    sys: &UncertainSystem,
    x: &DVector<f64>,
    u: &DVector<f64>,
    theta: &DVector<f64>,
) -> Result<DVector<f64>, SimError> {
    if !x.iter().chain(u.iter()).chain(theta.iter()).all(|v| v.is_finite()) {
        return Err(SimError::NonFinite { what: "dynamics input", t: f64::NAN });
    }
    Ok(sys.f(x) - sys.delta(x).transpose() * theta + sys.b(x) * u)
}

/// Closed-loop state Jacobian `A(x, u, theta)` of `eval_dynamics` in `x`:
/// `df/dx - sum_k theta_k d(Delta row k)/dx + sum_i u_i d(b_i)/dx`.
pub fn eval_closed_loop_jacobian(
    sys: &UncertainSystem,
    x: &DVector<f64>,
    u: &DVector<f64>,
    theta: &DVector<f64>,
) -> Result<DMatrix<f64>, SimError> {
    if !x.iter().chain(u.iter()).chain(theta.iter()).all(|v| v.is_finite()) {
        return Err(SimError::NonFinite { what: "jacobian input", t: f64::NAN });
    }
    let mut a = sys.jac_f(x);
    for (k, jd) in sys.jac_delta_rows(x).iter().enumerate() {
        a -= jd * theta[k];
    }
    for (i, jb) in sys.jac_b_cols(x).iter().enumerate() {
        a += jb * u[i];
    }
    Ok(a)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotionKind {
    /// Constant desired state with zero desired dynamics.
    TerminalState,
    /// Full time-varying desired trajectory.
    Trajectory,
}

type TimeFn = Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>;

/// Desired state and desired dynamics for the tracking controller.
#[derive(Clone)]
pub struct DesiredMotion {
    x_d: TimeFn,
    xdot_d: TimeFn,
    pub kind: MotionKind,
}

impl DesiredMotion {
    pub fn new(kind: MotionKind, x_d: TimeFn, xdot_d: TimeFn) -> Self {
        Self { x_d, xdot_d, kind }
    }

    pub fn terminal(x_d: DVector<f64>) -> Self {
        let n = x_d.len();
        Self {
            x_d: Arc::new(move |_| x_d.clone()),
            xdot_d: Arc::new(move |_| DVector::zeros(n)),
            kind: MotionKind::TerminalState,
        }
    }

    pub fn x_d(&self, t: f64) -> DVector<f64> {
        (self.x_d)(t)
    }
    pub fn xdot_d(&self, t: f64) -> DVector<f64> {
        (self.xdot_d)(t)
    }
}

/// Build the desired motion for a named scenario.
///
/// * `immelmann` - constant terminal state `(pi, 0, 0)`.
/// * `sine_tracking` - pitch command `theta_d(t) = -(20 deg) cos t` with
///   `alpha_d = 0` and `q_d = thetadot_d`.
/// * `example1` - scalar placeholder at the origin (the chattering example
///   runs as a pure safety filter with no tracking objective).
pub fn make_desired_motion(scenario: &str) -> Result<DesiredMotion, SimError> {
    match scenario {
        "immelmann" => Ok(DesiredMotion::terminal(DVector::from_column_slice(&[
            std::f64::consts::PI,
            0.0,
            0.0,
        ]))),
        "sine_tracking" => {
            let amp = 20.0_f64.to_radians();
            Ok(DesiredMotion::new(
                MotionKind::Trajectory,
                Arc::new(move |t: f64| {
                    DVector::from_column_slice(&[-amp * t.cos(), 0.0, amp * t.sin()])
                }),
                Arc::new(move |t: f64| {
                    DVector::from_column_slice(&[amp * t.sin(), 0.0, amp * t.cos()])
                }),
            ))
        }
        "example1" => Ok(DesiredMotion::terminal(DVector::zeros(1))),
        other => Err(SimError::UnknownScenario(other.into())),
    }
}

/// Per-step log a controller can attach to the trace. Fields that do not
/// apply to a given controller stay at their defaults.
#[derive(Debug, Clone, Default)]
pub struct StepLog {
    pub slack: f64,
    pub barrier: f64,
    pub energy: f64,
    pub theta_b: Vec<f64>,
    pub theta_c: Vec<f64>,
    pub box_lo: Vec<f64>,
    pub box_hi: Vec<f64>,
    pub safety_active: bool,
    pub geodesic_outside_region: bool,
    pub nlp_seconds: f64,
    pub qp_seconds: f64,
    pub lp_seconds: f64,
}

/// Control decision for one step: the zero-order-hold input plus the log row.
#[derive(Debug, Clone)]
pub struct ControlDecision {
    pub u: DVector<f64>,
    pub log: StepLog,
}

impl ControlDecision {
    pub fn plain(u: DVector<f64>) -> Self {
        Self { u, log: StepLog::default() }
    }
}

/// Feedback controller evaluated once per step at `(t_k, x_k)`.
pub trait Controller {
    fn control(&mut self, t: f64, x: &DVector<f64>) -> Result<ControlDecision, SimError>;
}

impl<F> Controller for F
where
    F: FnMut(f64, &DVector<f64>) -> Result<ControlDecision, SimError>,
{
    fn control(&mut self, t: f64, x: &DVector<f64>) -> Result<ControlDecision, SimError> {
        self(t, x)
    }
}

/// Closed-loop simulation record. All arrays share the same length; entry
/// `k` holds the state at `t_k` together with the input and diagnostics the
/// controller produced at `t_k` (the final entry's input is evaluated but
/// not applied).
#[derive(Debug, Clone, Default)]
pub struct SimTrace {
    pub time: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub logs: Vec<StepLog>,
}

impl SimTrace {
    pub fn len(&self) -> usize {
        self.time.len()
    }
    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }
    pub fn state_component(&self, i: usize) -> impl Iterator<Item = f64> + '_ {
        self.states.iter().map(move |x| x[i])
    }
}

/// Integrate the closed loop with classical RK4 and the control held over
/// each step (zero-order hold). The trace covers `[0, t_span]` at step `dt`.
pub fn integrate(
    sys: &UncertainSystem,
    controller: &mut dyn Controller,
    x0: DVector<f64>,
    theta_true: &DVector<f64>,
    t_span: f64,
    dt: f64,
) -> Result<SimTrace, SimError> {
    if dt <= 0.0 || !dt.is_finite() {
        return Err(SimError::BadSetup(format!("dt = {dt}")));
    }
    if t_span < 0.0 {
        return Err(SimError::BadSetup(format!("t_span = {t_span}")));
    }
    let steps = (t_span / dt).round() as usize;
    let mut trace = SimTrace::default();
    trace.time.reserve(steps + 1);
    let mut x = x0;
    for k in 0..=steps {
        let t = k as f64 * dt;
        if !x.iter().all(|v| v.is_finite()) {
            return Err(SimError::NonFinite { what: "state", t });
        }
        let decision = controller.control(t, &x)?;
        if !decision.u.iter().all(|v| v.is_finite()) {
            return Err(SimError::NonFinite { what: "control input", t });
        }
        trace.time.push(t);
        trace.states.push(x.clone());
        trace.inputs.push(decision.u.clone());
        trace.logs.push(decision.log);
        if k == steps {
            break;
        }
        x = rk4_step(sys, &x, &decision.u, theta_true, dt)
            .map_err(|e| attach_time(e, t))?;
    }
    Ok(trace)
}

fn attach_time(e: SimError, t: f64) -> SimError {
    match e {
        SimError::NonFinite { what, .. } => SimError::NonFinite { what, t },
        other => other,
    }
}

fn rk4_step(
    sys: &UncertainSystem,
    x: &DVector<f64>,
    u: &DVector<f64>,
    theta: &DVector<f64>,
    dt: f64,
) -> Result<DVector<f64>, SimError> {
    let k1 = eval_dynamics(sys, x, u, theta)?;
    let k2 = eval_dynamics(sys, &(x + 0.5 * dt * &k1), u, theta)?;
    let k3 = eval_dynamics(sys, &(x + 0.5 * dt * &k2), u, theta)?;
    let k4 = eval_dynamics(sys, &(x + dt * &k3), u, theta)?;
    Ok(x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn v(s: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(s)
    }

    #[test]
    fn pitch_equilibrium_at_origin() {
        let sys = pitch_plant();
        let xdot = eval_dynamics(&sys, &v(&[0.0, 0.0, 0.0]), &v(&[0.0]), &v(&[0.2, -1.0])).unwrap();
        assert!(xdot.amax() < 1e-15);
    }

    #[test]
    fn pitch_dynamics_at_quarter_pi_alpha() {
        // L(pi/4) = 0.8 sin(pi/2) = 0.8, so xdot = (0, -0.8, 0.8) for
        // theta = (0.2, -1) at x = (0, pi/4, 0), u = 0.
        let sys = pitch_plant();
        let xdot = eval_dynamics(
            &sys,
            &v(&[0.0, std::f64::consts::FRAC_PI_4, 0.0]),
            &v(&[0.0]),
            &v(&[0.2, -1.0]),
        )
        .unwrap();
        assert!((xdot[0] - 0.0).abs() < 1e-14);
        assert!((xdot[1] + 0.8).abs() < 1e-14);
        assert!((xdot[2] - 0.8).abs() < 1e-14);
    }

    #[test]
    fn pitch_dynamics_hand_substitution() {
        let sys = pitch_plant();
        let xdot =
            eval_dynamics(&sys, &v(&[0.0, 0.0, 0.1]), &v(&[0.5]), &v(&[0.2, -1.0])).unwrap();
        assert!((xdot[0] - 0.1).abs() < 1e-14);
        assert!((xdot[1] - 0.1).abs() < 1e-14);
        assert!((xdot[2] - (-0.02 + 0.5)).abs() < 1e-14);
    }

    #[test]
    fn non_finite_input_is_an_error() {
        let sys = pitch_plant();
        let r = eval_dynamics(&sys, &v(&[f64::NAN, 0.0, 0.0]), &v(&[0.0]), &v(&[0.2, -1.0]));
        assert!(r.is_err());
    }

    #[test]
    fn linear_system_jacobian_is_constant() {
        // xdot = A x + B u with constant A, B.
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -3.0]);
        let sys = {
            let a = a.clone();
            UncertainSystem::from_parts(
                2,
                1,
                1,
                move |x: &DVector<f64>| &a * x,
                |_x| DMatrix::zeros(1, 2),
                |_x| DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
            )
        };
        let jac =
            eval_closed_loop_jacobian(&sys, &v(&[0.3, -0.2]), &v(&[0.7]), &v(&[0.5])).unwrap();
        assert!((jac - a).amax() < 1e-6);
    }

    #[test]
    fn pitch_alpha_jacobian_entry() {
        // d(alphadot)/dalpha = -d/dalpha 0.8 sin(2 alpha) = -1.6 at alpha = 0.
        let sys = pitch_plant();
        let jac =
            eval_closed_loop_jacobian(&sys, &v(&[0.0, 0.0, 0.0]), &v(&[0.0]), &v(&[0.0, 0.0]))
                .unwrap();
        assert!((jac[(1, 1)] + 1.6).abs() < 1e-12);
    }

    #[test]
    fn constant_input_matrix_contributes_nothing() {
        let sys = pitch_plant();
        let x = v(&[0.4, 0.2, -0.1]);
        let j0 = eval_closed_loop_jacobian(&sys, &x, &v(&[0.0]), &v(&[0.2, -1.0])).unwrap();
        let j1 = eval_closed_loop_jacobian(&sys, &x, &v(&[5.0]), &v(&[0.2, -1.0])).unwrap();
        assert!((j0 - j1).amax() < 1e-14);
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let sys = pitch_plant();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let x = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
            let u = v(&[rng.random_range(-2.0..2.0)]);
            let theta = v(&[rng.random_range(0.1..0.8), rng.random_range(-3.0..1.0)]);
            let analytic = eval_closed_loop_jacobian(&sys, &x, &u, &theta).unwrap();
            let sys2 = sys.clone();
            let u2 = u.clone();
            let th2 = theta.clone();
            let numeric = numeric_jacobian(
                move |y: &DVector<f64>| eval_dynamics(&sys2, y, &u2, &th2).unwrap(),
                &x,
            );
            let scale = 1.0 + analytic.amax();
            assert!(
                (analytic - numeric).amax() / scale < 1e-5,
                "jacobian mismatch at x = {x}"
            );
        }
    }

    #[test]
    fn annihilator_orthogonal_at_random_states() {
        let sys = pitch_plant();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let x = DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
            let prod = sys.b_perp(&x).transpose() * sys.b(&x);
            assert!(prod.amax() < 1e-10);
        }
    }

    #[test]
    fn dynamics_linear_in_u_and_theta() {
        let sys = pitch_plant();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let x = DVector::from_fn(3, |_, _| rng.random_range(-1.5..1.5));
            let u1 = v(&[rng.random_range(-1.0..1.0)]);
            let u2 = v(&[rng.random_range(-1.0..1.0)]);
            let th1 = DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0));
            let th2 = DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0));
            let zero_u = v(&[0.0]);
            let zero_th = DVector::zeros(2);
            let base = eval_dynamics(&sys, &x, &zero_u, &zero_th).unwrap();
            let a = eval_dynamics(&sys, &x, &(&u1 + &u2), &(&th1 + &th2)).unwrap();
            let b = eval_dynamics(&sys, &x, &u1, &th1).unwrap()
                + eval_dynamics(&sys, &x, &u2, &th2).unwrap()
                - &base;
            assert!((a - b).amax() < 1e-12);
        }
    }

    fn decay_system() -> UncertainSystem {
        UncertainSystem::from_parts(
            1,
            1,
            1,
            |x: &DVector<f64>| -x,
            |_x| DMatrix::zeros(1, 1),
            |_x| DMatrix::from_element(1, 1, 1.0),
        )
    }

    #[test]
    fn zero_dynamics_constant_trace() {
        let sys = UncertainSystem::from_parts(
            2,
            1,
            1,
            |x: &DVector<f64>| DVector::zeros(x.len()),
            |_x| DMatrix::zeros(1, 2),
            |_x| DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
        );
        let mut ctrl = |_t: f64, _x: &DVector<f64>| Ok(ControlDecision::plain(v(&[0.0])));
        let x0 = v(&[1.5, -2.0]);
        let trace =
            integrate(&sys, &mut ctrl, x0.clone(), &v(&[0.0]), 1.0, 0.01).unwrap();
        assert_eq!(trace.len(), 101);
        for x in &trace.states {
            assert!((x - &x0).amax() < 1e-15);
        }
    }

    #[test]
    fn exponential_decay_matches_analytic() {
        let sys = decay_system();
        let mut ctrl = |_t: f64, _x: &DVector<f64>| Ok(ControlDecision::plain(v(&[0.0])));
        let trace = integrate(&sys, &mut ctrl, v(&[1.0]), &v(&[0.0]), 1.0, 1e-3).unwrap();
        let x_end = trace.states.last().unwrap()[0];
        assert!((x_end - (-1.0f64).exp()).abs() < 1e-6);
    }

    #[test]
    fn example1_closed_form_descent() {
        // xdot = -theta + u with u = 0, theta = 1: x(t) = x0 - t.
        let sys = example1_system();
        let mut ctrl = |_t: f64, _x: &DVector<f64>| Ok(ControlDecision::plain(v(&[0.0])));
        let trace = integrate(&sys, &mut ctrl, v(&[2.0]), &v(&[1.0]), 1.5, 1e-3).unwrap();
        for (t, x) in trace.time.iter().zip(&trace.states) {
            assert!((x[0] - (2.0 - t)).abs() < 1e-9);
        }
    }

    #[test]
    fn rk4_is_fourth_order() {
        // Halving dt must reduce the terminal error on xdot = -x by ~16x.
        let sys = decay_system();
        let exact = (-1.0f64).exp();
        let mut err = Vec::new();
        for dt in [0.02, 0.01] {
            let mut ctrl =
                |_t: f64, _x: &DVector<f64>| Ok(ControlDecision::plain(v(&[0.0])));
            let trace = integrate(&sys, &mut ctrl, v(&[1.0]), &v(&[0.0]), 1.0, dt).unwrap();
            err.push((trace.states.last().unwrap()[0] - exact).abs());
        }
        let ratio = err[0] / err[1];
        assert!((12.0..=20.0).contains(&ratio), "order ratio {ratio}");
    }

    #[test]
    fn desired_motion_immelmann() {
        let m = make_desired_motion("immelmann").unwrap();
        for t in [0.0, 3.3, 10.0] {
            let xd = m.x_d(t);
            assert!((xd[0] - std::f64::consts::PI).abs() < 1e-15);
            assert_eq!(xd[1], 0.0);
            assert_eq!(xd[2], 0.0);
            assert!(m.xdot_d(t).amax() == 0.0);
        }
        assert_eq!(m.kind, MotionKind::TerminalState);
    }

    #[test]
    fn desired_motion_sine() {
        let m = make_desired_motion("sine_tracking").unwrap();
        let amp = 20.0_f64.to_radians();
        let x0 = m.x_d(0.0);
        assert!((x0[0] + amp).abs() < 1e-15);
        assert_eq!(x0[2], 0.0);
        let xq = m.x_d(std::f64::consts::FRAC_PI_2);
        assert!(xq[0].abs() < 1e-15);
        assert!((xq[2] - amp).abs() < 1e-15);
        assert_eq!(m.kind, MotionKind::Trajectory);
    }

    #[test]
    fn unknown_scenario_is_an_error() {
        assert!(make_desired_motion("loop_the_loop").is_err());
    }
}
