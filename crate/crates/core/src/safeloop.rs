//! The per-step safe tracking controller.
//!
//! Each step runs the pipeline: geodesic solve, then one quadratic program
//! over `(u, slack)` minimizing `0.5 u'u + r slack^2` subject to the soft
//! stability constraint and the hard barrier row, then the two adaptation
//! laws by explicit Euler with box projection. Tracking adaptation freezes
//! while the safety constraint is active so the estimate cannot wind up
//! against the barrier. The alternative baseline steps swap the barrier row
//! for the (modified) adaptive-barrier condition with its gated adaptation.
//!
//! [`SafetyController`] wraps a step function together with measurement
//! buffering and the periodic set-membership bound updates, and implements
//! the simulation harness's controller trait.

use crate::barriers::{
    acbf_constraint_row, admissible_gain_floor, barrier_adaptation_rhs, racbf_constraint_row,
    BarrierSpec, TighteningData,
};
use crate::geodesics::{solve_geodesic, GeodesicError, GeodesicResult, GeodesicWorkspace};
use crate::metrics::MetricFamily;
use crate::optkit::{solve_qp, QuadraticProgram, SolveStatus};
use crate::smid::{max_error_vector, update_bounds, BufferEntry, MeasurementBuffer, ParameterBox};
use crate::sysmodel::{ControlDecision, Controller, DesiredMotion, SimError, StepLog, UncertainSystem};
use nalgebra::{DMatrix, DVector};
use std::time::Instant;
use thiserror::Error;

/// Residual band below which a constraint row counts as active.
pub const ACTIVE_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum StepError {
    #[error("controller QP was {status:?} at t = {t}: {detail}")]
    Qp { t: f64, status: SolveStatus, detail: String },
    #[error("geodesic failure at t = {t}: {source}")]
    Geodesic {
        t: f64,
        #[source]
        source: GeodesicError,
    },
    #[error("solver error at t = {t}: {source}")]
    Solver {
        t: f64,
        #[source]
        source: crate::optkit::OptError,
    },
    #[error("invalid controller setup: {0}")]
    BadSetup(String),
}

/// Which barrier mechanism a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BarrierMethod {
    /// Modified adaptive barrier baseline.
    ModifiedAcbf,
    /// Robust adaptive barrier with fixed error bounds.
    Racbf,
    /// Robust adaptive barrier with online set-membership bound updates.
    RacbfSmid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineVariant {
    /// Adaptive barrier condition applied to the raw barrier.
    Plain,
    /// Condition applied through the piecewise band wrapper.
    Modified,
}

/// Mutable estimate and gain state carried across steps.
#[derive(Debug, Clone)]
pub struct ControllerState {
    /// Tracking-side estimate.
    pub theta_hat_c: DVector<f64>,
    /// Barrier-side estimate.
    pub theta_hat_b: DVector<f64>,
    pub param_box: ParameterBox,
    /// Current max-error vector (box width while bounds update).
    pub vartheta: DVector<f64>,
    /// True when the barrier row was active at the last step (tracking
    /// adaptation frozen).
    pub freeze_c: bool,
    /// Slack weight `r` in the QP objective.
    pub slack_weight: f64,
    /// Contraction rate used in the stability constraint.
    pub lambda: f64,
    pub gamma_c: DMatrix<f64>,
    pub gamma_b: DMatrix<f64>,
}

impl ControllerState {
    /// Validate the admissible-gain condition for the initial error bounds:
    /// the smallest eigenvalue of the barrier gain must reach
    /// `|v|^2 / (2 margin)` for the tightening the gain itself induces.
    pub fn validate_gain(&self) -> Result<(), StepError> {
        if self.vartheta.amax() == 0.0 {
            return Ok(());
        }
        let tight = TighteningData::new(self.gamma_b.clone(), self.vartheta.clone())
            .map_err(|e| StepError::BadSetup(e.to_string()))?;
        let floor = admissible_gain_floor(&self.vartheta, tight.margin())
            .map_err(|e| StepError::BadSetup(e.to_string()))?;
        let min_eig = crate::metrics::symmetric_min_eig(&self.gamma_b);
        if min_eig + 1e-9 * (1.0 + floor) < floor {
            return Err(StepError::BadSetup(format!(
                "barrier gain min eigenvalue {min_eig} below admissible floor {floor}"
            )));
        }
        Ok(())
    }

    fn tightening(&self) -> Result<TighteningData, StepError> {
        TighteningData::new(self.gamma_b.clone(), self.vartheta.clone())
            .map_err(|e| StepError::BadSetup(e.to_string()))
    }
}

/// Per-step output of a controller step.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub u: DVector<f64>,
    pub slack: f64,
    pub energy: f64,
    /// Raw barrier value at the query state (not the wrapped one), for
    /// comparable logs across methods.
    pub h_r: f64,
    pub safety_active: bool,
    pub geodesic_fallback: bool,
    pub geodesic_outside_region: bool,
    pub nlp_seconds: f64,
    pub qp_seconds: f64,
}

/// Everything the tracking side needs; `None` turns a step into a pure
/// min-norm safety filter.
pub struct Tracking<'a> {
    pub metric: &'a MetricFamily,
    pub motion: &'a DesiredMotion,
    pub workspace: &'a GeodesicWorkspace,
}

/// One robust-adaptive step: geodesic (when tracking), QP with the hard
/// robust barrier row, then both adaptation laws with projection; tracking
/// adaptation is skipped while the barrier row is active.
pub fn step_racbf(
    state: &ControllerState,
    sys: &UncertainSystem,
    tracking: Option<&Tracking>,
    barrier: &BarrierSpec,
    input_bounds: Option<&[(f64, f64)]>,
    x: &DVector<f64>,
    t: f64,
    dt: f64,
) -> Result<(StepOutput, ControllerState), StepError> {
    let tight = state.tightening()?;
    let row = racbf_constraint_row(sys, barrier, &tight, x, &state.theta_hat_b);
    let adapt_b = barrier_adaptation_rhs(sys, barrier, &state.gamma_b, x, &state.theta_hat_b);
    let h_log = barrier.h(x, &state.theta_hat_b);
    step_inner(state, sys, tracking, row, h_log, adapt_b, true, input_bounds, x, t, dt)
}

/// One baseline adaptive step. The `Modified` variant wraps the barrier in
/// the band wrapper and gates the adaptation on the band:
/// `thetadot = -Gamma (h_a - sigma) Delta (dh_a/dx)'` inside, zero outside.
#[allow(clippy::too_many_arguments)]
pub fn step_acbf_baseline(
    state: &ControllerState,
    sys: &UncertainSystem,
    tracking: Option<&Tracking>,
    barrier_base: &BarrierSpec,
    sigma: f64,
    input_bounds: Option<&[(f64, f64)]>,
    x: &DVector<f64>,
    t: f64,
    dt: f64,
    variant: BaselineVariant,
) -> Result<(StepOutput, ControllerState), StepError> {
    let (row, adapt_b) = match variant {
        BaselineVariant::Plain => {
            let row = acbf_constraint_row(sys, barrier_base, &state.gamma_b, x, &state.theta_hat_b);
            let adapt =
                barrier_adaptation_rhs(sys, barrier_base, &state.gamma_b, x, &state.theta_hat_b);
            (row, adapt)
        }
        BaselineVariant::Modified => {
            let wrapped = BarrierSpec::modified(barrier_base, sigma);
            let row = acbf_constraint_row(sys, &wrapped, &state.gamma_b, x, &state.theta_hat_b);
            let h_a = barrier_base.h(x, &state.theta_hat_b);
            let adapt = if h_a >= sigma {
                DVector::zeros(state.theta_hat_b.len())
            } else {
                let grad = sys.delta(x) * barrier_base.dh_dx(x, &state.theta_hat_b);
                &state.gamma_b * grad * (-(h_a - sigma))
            };
            (row, adapt)
        }
    };
    let h_log = barrier_base.h(x, &state.theta_hat_b);
    step_inner(state, sys, tracking, row, h_log, adapt_b, false, input_bounds, x, t, dt)
}

/// True when the barrier row of a solved step QP counts as active: it is in
/// the active set or its residual is inside the tolerance band.
pub fn detect_safety_active(
    active_set: &[usize],
    barrier_row_index: usize,
    barrier_residual: f64,
) -> bool {
    active_set.contains(&barrier_row_index) || barrier_residual < ACTIVE_TOL
}

#[allow(clippy::too_many_arguments)]
fn step_inner(
    state: &ControllerState,
    sys: &UncertainSystem,
    tracking: Option<&Tracking>,
    (coeff_u, rhs): (DVector<f64>, f64),
    h_log: f64,
    adapt_b: DVector<f64>,
    freeze_on_active: bool,
    input_bounds: Option<&[(f64, f64)]>,
    x: &DVector<f64>,
    t: f64,
    dt: f64,
) -> Result<(StepOutput, ControllerState), StepError> {
    let m = sys.dim_u;

    // Geodesic between the desired and current state.
    let nlp_start = Instant::now();
    let geo: Option<(GeodesicResult, DVector<f64>, DVector<f64>)> = match tracking {
        Some(tr) => {
            let x_d = tr.motion.x_d(t);
            let res = solve_geodesic(x, &x_d, tr.metric, &state.theta_hat_c, tr.workspace)
                .map_err(|source| StepError::Geodesic { t, source })?;
            let xdot_d = tr.motion.xdot_d(t);
            Some((res, x_d, xdot_d))
        }
        None => None,
    };
    let nlp_seconds = nlp_start.elapsed().as_secs_f64();

    // Assemble the QP over z = (u, slack).
    let qp_start = Instant::now();
    let with_slack = geo.is_some();
    let dim = if with_slack { m + 1 } else { m };
    let mut hessian = DMatrix::identity(dim, dim);
    if with_slack {
        hessian[(m, m)] = 2.0 * state.slack_weight;
    }
    let mut rows: Vec<DVector<f64>> = Vec::new();
    let mut rhs_vec: Vec<f64> = Vec::new();

    // Soft stability row:
    // gamma1' M B u - slack <= -lambda E - gamma1' M (f - Delta' th_C)
    //                          + gamma0' M_d xdot_d.
    let mut m_gamma1 = DVector::zeros(sys.dim_x);
    if let Some((res, x_d, xdot_d)) = &geo {
        let tr = tracking.unwrap();
        m_gamma1 = tr
            .metric
            .apply_m(x, &state.theta_hat_c, &res.gamma_s1)
            .map_err(|_| StepError::Geodesic { t, source: GeodesicError::MetricNotSpd { s: 1.0 } })?;
        let m_xdot_d = tr
            .metric
            .apply_m(x_d, &state.theta_hat_c, xdot_d)
            .map_err(|_| StepError::Geodesic { t, source: GeodesicError::MetricNotSpd { s: 0.0 } })?;
        let drift = sys.f(x) - sys.delta(x).transpose() * &state.theta_hat_c;
        let mut row = DVector::zeros(dim);
        let bu_coeff = sys.b(x).transpose() * &m_gamma1;
        for i in 0..m {
            row[i] = bu_coeff[i];
        }
        row[m] = -1.0;
        rows.push(row);
        rhs_vec.push(
            -state.lambda * res.energy - m_gamma1.dot(&drift) + m_xdot_d.dot(&res.gamma_s0),
        );
    }

    // Hard barrier row: coeff_u . u >= rhs  ->  -coeff_u . u <= -rhs.
    let barrier_row_index = rows.len();
    {
        let mut row = DVector::zeros(dim);
        for i in 0..m {
            row[i] = -coeff_u[i];
        }
        rows.push(row);
        rhs_vec.push(-rhs);
    }

    if let Some(bounds) = input_bounds {
        for (i, (lo, hi)) in bounds.iter().enumerate() {
            if hi.is_finite() {
                let mut row = DVector::zeros(dim);
                row[i] = 1.0;
                rows.push(row);
                rhs_vec.push(*hi);
            }
            if lo.is_finite() {
                let mut row = DVector::zeros(dim);
                row[i] = -1.0;
                rows.push(row);
                rhs_vec.push(-*lo);
            }
        }
    }

    let mut ineq = DMatrix::zeros(rows.len(), dim);
    for (r, row) in rows.iter().enumerate() {
        ineq.row_mut(r).copy_from(&row.transpose());
    }
    let qp = QuadraticProgram {
        hessian,
        gradient: DVector::zeros(dim),
        ineq_matrix: ineq.clone(),
        ineq_rhs: DVector::from_vec(rhs_vec.clone()),
    };
    let report = solve_qp(&qp).map_err(|source| StepError::Solver { t, source })?;
    if report.status != SolveStatus::Optimal {
        return Err(StepError::Qp {
            t,
            status: report.status,
            detail: format!(
                "barrier row coeff {:?} rhs {rhs}; this requires a vanishing input \
                 coefficient with a violated right-hand side",
                coeff_u.as_slice()
            ),
        });
    }
    let qp_seconds = qp_start.elapsed().as_secs_f64();

    let u = DVector::from_fn(m, |i, _| report.solution[i]);
    let slack = if with_slack { report.solution[m].max(0.0) } else { 0.0 };
    let barrier_residual =
        rhs_vec[barrier_row_index] - ineq.row(barrier_row_index).transpose().dot(&report.solution);
    let safety_active =
        detect_safety_active(&report.active_set, barrier_row_index, barrier_residual);

    // Adaptation by explicit Euler, estimates clamped into the known box so
    // components pushing outward at an active bound are discarded.
    let mut next = state.clone();
    next.theta_hat_b = next.param_box.clamp(&(&state.theta_hat_b + adapt_b * dt));
    next.freeze_c = safety_active;
    if let Some((res, _, _)) = &geo {
        let freeze = freeze_on_active && safety_active;
        if !freeze {
            // thetadot_C = -Gamma_C Delta(x) M(x, th_C) gamma_s(1).
            let rate = -(&state.gamma_c) * (sys.delta(x) * &m_gamma1);
            next.theta_hat_c = next.param_box.clamp(&(&state.theta_hat_c + rate * dt));
        }
        let _ = res;
    }

    let (energy, fallback, outside) = match &geo {
        Some((res, _, _)) => (res.energy, res.fallback_linear, res.outside_verified_region),
        None => (0.0, false, false),
    };
    Ok((
        StepOutput {
            u,
            slack,
            energy,
            h_r: h_log,
            safety_active,
            geodesic_fallback: fallback,
            geodesic_outside_region: outside,
            nlp_seconds,
            qp_seconds,
        },
        next,
    ))
}

/// Settings for the periodic set-membership updates inside the controller.
#[derive(Debug, Clone)]
pub struct SmidSettings {
    /// Sliding window length in stored measurements.
    pub window: usize,
    /// Update every this many control steps.
    pub cadence: usize,
    /// Keep one measurement out of this many control steps. Spacing the
    /// window out gives its rows directional diversity (the lift and rate
    /// change appreciably between samples), which is what actually pins
    /// both parameters in the LPs.
    pub sample_every: usize,
    /// Disturbance bound `D`.
    pub disturbance_bound: f64,
    /// Rate-estimate error is `coeff * dt^2` per central-difference sample.
    pub rate_error_coeff: f64,
    /// Stop updating once every component of the width drops below this.
    pub stop_width: f64,
}

impl Default for SmidSettings {
    fn default() -> Self {
        Self {
            window: 80,
            cadence: 10,
            sample_every: 100,
            disturbance_bound: 0.1,
            rate_error_coeff: 10.0,
            stop_width: 1e-3,
        }
    }
}

/// Full closed-loop controller: owns the estimate state, the measurement
/// history and timing diagnostics, dispatches on the barrier method, and
/// plugs into the simulation harness.
pub struct SafetyController {
    pub method: BarrierMethod,
    pub state: ControllerState,
    sys: UncertainSystem,
    barrier: BarrierSpec,
    sigma: f64,
    metric: Option<MetricFamily>,
    motion: Option<DesiredMotion>,
    workspace: GeodesicWorkspace,
    input_bounds: Option<Vec<(f64, f64)>>,
    smid: SmidSettings,
    dt: f64,
    history: Vec<(DVector<f64>, DVector<f64>)>,
    steps: usize,
}

impl SafetyController {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        method: BarrierMethod,
        state: ControllerState,
        sys: UncertainSystem,
        barrier: BarrierSpec,
        sigma: f64,
        metric: Option<MetricFamily>,
        motion: Option<DesiredMotion>,
        workspace: GeodesicWorkspace,
        smid: SmidSettings,
        dt: f64,
    ) -> Result<Self, StepError> {
        if matches!(method, BarrierMethod::Racbf | BarrierMethod::RacbfSmid) {
            state.validate_gain()?;
        }
        if metric.is_some() != motion.is_some() {
            return Err(StepError::BadSetup(
                "tracking needs both a metric and a desired motion".into(),
            ));
        }
        Ok(Self {
            method,
            state,
            sys,
            barrier,
            sigma,
            metric,
            motion,
            workspace,
            input_bounds: None,
            smid,
            dt,
            history: Vec::new(),
            steps: 0,
        })
    }

    pub fn with_input_bounds(mut self, bounds: Vec<(f64, f64)>) -> Self {
        self.input_bounds = Some(bounds);
        self
    }

    /// Periodic bound update from the buffered history (central differences
    /// over the sliding window). Returns the time spent, or zero when the
    /// update was skipped.
    fn maybe_update_bounds(&mut self) -> f64 {
        if self.method != BarrierMethod::RacbfSmid {
            return 0.0;
        }
        if self.steps == 0 || self.steps % self.smid.cadence != 0 || self.history.len() < 3 {
            return 0.0;
        }
        if max_error_vector(&self.state.param_box)
            .iter()
            .all(|&w| w <= self.smid.stop_width)
        {
            return 0.0;
        }
        let start = Instant::now();
        let mut buffer =
            MeasurementBuffer::new(self.smid.window, self.smid.disturbance_bound);
        let rate_error = self.smid.rate_error_coeff * self.dt * self.dt;
        let len = self.history.len();
        // Walk backwards from the newest interior sample, one measurement
        // per `sample_every` steps, oldest first when pushed.
        let stride = self.smid.sample_every.max(1);
        let mut picks = Vec::with_capacity(self.smid.window);
        let mut j = len - 2;
        while picks.len() < self.smid.window && j >= 1 {
            picks.push(j);
            if j < stride {
                break;
            }
            j -= stride;
        }
        for &j in picks.iter().rev() {
            let rate = (&self.history[j + 1].0 - &self.history[j - 1].0) / (2.0 * self.dt);
            buffer.push(BufferEntry {
                x: self.history[j].0.clone(),
                u: self.history[j].1.clone(),
                xdot_est: rate,
                rate_error,
            });
        }
        let update = update_bounds(&buffer, &self.state.param_box, &self.sys);
        if !update.lp_infeasible {
            self.state.param_box = update.bounds;
            self.state.vartheta = max_error_vector(&self.state.param_box);
            self.state.theta_hat_b = self.state.param_box.clamp(&self.state.theta_hat_b);
            self.state.theta_hat_c = self.state.param_box.clamp(&self.state.theta_hat_c);
        }
        start.elapsed().as_secs_f64()
    }

    fn dispatch(&self, t: f64, x: &DVector<f64>) -> Result<(StepOutput, ControllerState), StepError> {
        let tracking_store;
        let tracking = match (&self.metric, &self.motion) {
            (Some(metric), Some(motion)) => {
                tracking_store = Tracking { metric, motion, workspace: &self.workspace };
                Some(&tracking_store)
            }
            _ => None,
        };
        let bounds = self.input_bounds.as_deref();
        match self.method {
            BarrierMethod::ModifiedAcbf => step_acbf_baseline(
                &self.state,
                &self.sys,
                tracking,
                &self.barrier,
                self.sigma,
                bounds,
                x,
                t,
                self.dt,
                BaselineVariant::Modified,
            ),
            BarrierMethod::Racbf | BarrierMethod::RacbfSmid => step_racbf(
                &self.state,
                &self.sys,
                tracking,
                &self.barrier,
                bounds,
                x,
                t,
                self.dt,
            ),
        }
    }
}

impl Controller for SafetyController {
    fn control(&mut self, t: f64, x: &DVector<f64>) -> Result<ControlDecision, SimError> {
        let lp_seconds = self.maybe_update_bounds();
        let (out, next) = self
            .dispatch(t, x)
            .map_err(|e| SimError::Controller { t, message: e.to_string() })?;
        self.state = next;
        self.history.push((x.clone(), out.u.clone()));
        let keep = self.smid.window * self.smid.sample_every.max(1) + 2;
        if self.history.len() > keep {
            let drop = self.history.len() - keep;
            self.history.drain(0..drop);
        }
        self.steps += 1;
        let log = StepLog {
            slack: out.slack,
            barrier: out.h_r,
            energy: out.energy,
            theta_b: self.state.theta_hat_b.iter().copied().collect(),
            theta_c: self.state.theta_hat_c.iter().copied().collect(),
            box_lo: self.state.param_box.lower().iter().copied().collect(),
            box_hi: self.state.param_box.upper().iter().copied().collect(),
            safety_active: out.safety_active,
            geodesic_outside_region: out.geodesic_outside_region,
            nlp_seconds: out.nlp_seconds,
            qp_seconds: out.qp_seconds,
            lp_seconds,
        };
        Ok(ControlDecision { u: out.u, log })
    }
}
