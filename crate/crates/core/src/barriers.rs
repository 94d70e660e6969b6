//! Barrier functions for uncertain systems.
//!
//! The robust adaptive barrier keeps the tightened set
//! `{x : h_r(x, theta) >= 0.5 v' G^-1 v}` forward invariant, where `v` is the
//! maximum possible parameter error and `G` the adaptation gain. The module
//! provides the constraint row that enters the controller QP, the barrier
//! adaptation law, the admissible-gain bound, the piecewise modified-aCBF
//! wrapper used by the baseline, and the projection that keeps estimates in
//! their known box.

use crate::smid::ParameterBox;
use crate::sysmodel::UncertainSystem;
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BarrierError {
    #[error("adaptation gain matrix is not symmetric positive definite")]
    GainNotSpd,
    #[error("max-error vector has a negative component")]
    NegativeError,
    #[error("reference barrier value must be positive, got {0}")]
    NonPositiveReference(f64),
}

/// Extended class-K function shaping the barrier decay. The default is the
/// linear `alpha(r) = c r`; any strictly increasing callable with
/// `alpha(0) = 0` is accepted.
#[derive(Clone)]
pub enum ClassK {
    Linear(f64),
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl ClassK {
    pub fn eval(&self, r: f64) -> f64 {
        match self {
            ClassK::Linear(c) => c * r,
            ClassK::Custom(f) => f(r),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BarrierKind {
    Plain,
    Adaptive,
    ModifiedAdaptive,
    RobustAdaptive,
}

type ScalarFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> f64 + Send + Sync>;
type GradFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;

/// Continuously differentiable barrier `h(x, theta_hat)` with its gradients.
#[derive(Clone)]
pub struct BarrierSpec {
    pub kind: BarrierKind,
    pub alpha: ClassK,
    h: ScalarFn,
    dh_dx: GradFn,
    dh_dtheta: GradFn,
}

impl BarrierSpec {
    pub fn new(kind: BarrierKind, alpha: ClassK, h: ScalarFn, dh_dx: GradFn, dh_dtheta: GradFn) -> Self {
        Self { kind, alpha, h, dh_dx, dh_dtheta }
    }

    pub fn h(&self, x: &DVector<f64>, theta_hat: &DVector<f64>) -> f64 {
        (self.h)(x, theta_hat)
    }
    pub fn dh_dx(&self, x: &DVector<f64>, theta_hat: &DVector<f64>) -> DVector<f64> {
        (self.dh_dx)(x, theta_hat)
    }
    pub fn dh_dtheta(&self, x: &DVector<f64>, theta_hat: &DVector<f64>) -> DVector<f64> {
        (self.dh_dtheta)(x, theta_hat)
    }

    /// Pitch-rate ceiling `h(x) = q_m - q` for the 3-state pitch plant.
    pub fn pitch_rate_ceiling(q_m: f64, alpha_slope: f64, dim_theta: usize) -> Self {
        Self::new(
            BarrierKind::RobustAdaptive,
            ClassK::Linear(alpha_slope),
            Arc::new(move |x: &DVector<f64>, _: &DVector<f64>| q_m - x[2]),
            Arc::new(|_x: &DVector<f64>, _: &DVector<f64>| {
                DVector::from_column_slice(&[0.0, 0.0, -1.0])
            }),
            Arc::new(move |_x: &DVector<f64>, _: &DVector<f64>| DVector::zeros(dim_theta)),
        )
    }

    /// Symmetric pitch-rate bound `h(x) = 1 - (q / q_m)^2`.
    pub fn pitch_rate_symmetric(q_m: f64, alpha_slope: f64, dim_theta: usize) -> Self {
        Self::new(
            BarrierKind::RobustAdaptive,
            ClassK::Linear(alpha_slope),
            Arc::new(move |x: &DVector<f64>, _: &DVector<f64>| 1.0 - (x[2] / q_m).powi(2)),
            Arc::new(move |x: &DVector<f64>, _: &DVector<f64>| {
                DVector::from_column_slice(&[0.0, 0.0, -2.0 * x[2] / (q_m * q_m)])
            }),
            Arc::new(move |_x: &DVector<f64>, _: &DVector<f64>| DVector::zeros(dim_theta)),
        )
    }

    /// Scalar floor `h(x) = x - x_floor` for the chattering example.
    pub fn scalar_floor(x_floor: f64, alpha_slope: f64) -> Self {
        Self::new(
            BarrierKind::RobustAdaptive,
            ClassK::Linear(alpha_slope),
            Arc::new(move |x: &DVector<f64>, _: &DVector<f64>| x[0] - x_floor),
            Arc::new(|_x: &DVector<f64>, _: &DVector<f64>| DVector::from_column_slice(&[1.0])),
            Arc::new(|_x: &DVector<f64>, _: &DVector<f64>| DVector::zeros(1)),
        )
    }

    /// Wrap a barrier with the piecewise modification that caps its value at
    /// `sigma^2`; gradients follow by the chain rule and vanish above the
    /// band, which is exactly what makes the baseline controller switch.
    pub fn modified(base: &BarrierSpec, sigma: f64) -> Self {
        assert!(sigma > 0.0);
        let h0 = base.h.clone();
        let hx = base.h.clone();
        let ht = base.h.clone();
        let dx = base.dh_dx.clone();
        let dt = base.dh_dtheta.clone();
        Self::new(
            BarrierKind::ModifiedAdaptive,
            base.alpha.clone(),
            Arc::new(move |x: &DVector<f64>, th: &DVector<f64>| modified_acbf(h0(x, th), sigma)),
            Arc::new(move |x: &DVector<f64>, th: &DVector<f64>| {
                dx(x, th) * modified_acbf_slope(hx(x, th), sigma)
            }),
            Arc::new(move |x: &DVector<f64>, th: &DVector<f64>| {
                dt(x, th) * modified_acbf_slope(ht(x, th), sigma)
            }),
        )
    }
}

/// Adaptation gain and maximum-error data defining the set tightening.
#[derive(Debug, Clone)]
pub struct TighteningData {
    gamma: DMatrix<f64>,
    vartheta_max: DVector<f64>,
}

impl TighteningData {
    pub fn new(gamma: DMatrix<f64>, vartheta_max: DVector<f64>) -> Result<Self, BarrierError> {
        if vartheta_max.iter().any(|&v| v < 0.0) {
            return Err(BarrierError::NegativeError);
        }
        if vartheta_max.amax() > 0.0 && gamma.clone().cholesky().is_none() {
            return Err(BarrierError::GainNotSpd);
        }
        Ok(Self { gamma, vartheta_max })
    }

    pub fn isotropic(gain: f64, vartheta_max: DVector<f64>) -> Result<Self, BarrierError> {
        let p = vartheta_max.len();
        Self::new(DMatrix::identity(p, p) * gain, vartheta_max)
    }

    pub fn gamma(&self) -> &DMatrix<f64> {
        &self.gamma
    }
    pub fn vartheta_max(&self) -> &DVector<f64> {
        &self.vartheta_max
    }

    pub fn set_vartheta_max(&mut self, v: DVector<f64>) {
        debug_assert!(v.iter().all(|&x| x >= 0.0));
        self.vartheta_max = v;
    }

    /// Tightening level `0.5 v' G^-1 v` of the robust safe set.
    pub fn margin(&self) -> f64 {
        if self.vartheta_max.amax() == 0.0 {
            return 0.0;
        }
        let sol = self
            .gamma
            .clone()
            .cholesky()
            .expect("gain validated SPD at construction")
            .solve(&self.vartheta_max);
        0.5 * self.vartheta_max.dot(&sol)
    }
}

/// `Lambda(x, theta) = theta - Gamma (dh/dtheta)'`, the estimate shift that
/// absorbs the adaptation term in the barrier condition.
pub fn lambda_map(
    theta_hat: &DVector<f64>,
    spec: &BarrierSpec,
    gamma: &DMatrix<f64>,
    x: &DVector<f64>,
) -> DVector<f64> {
    theta_hat - gamma * spec.dh_dtheta(x, theta_hat)
}

/// The robust adaptive barrier constraint as a linear row in `u`:
/// `coeff_u . u >= rhs` with
/// `coeff_u = (dh/dx) B(x)` and
/// `rhs = -alpha(h - margin) - (dh/dx) (f - Delta' Lambda)`.
pub fn racbf_constraint_row(
    sys: &UncertainSystem,
    spec: &BarrierSpec,
    tight: &TighteningData,
    x: &DVector<f64>,
    theta_hat: &DVector<f64>,
) -> (DVector<f64>, f64) {
    constraint_row_inner(sys, spec, tight.gamma(), Some((&spec.alpha, tight.margin())), x, theta_hat)
}

/// The (non-robust) adaptive barrier row of the baseline: same structure
/// with zero right-hand side, i.e. `(dh/dx)(f - Delta' Lambda + B u) >= 0`.
pub fn acbf_constraint_row(
    sys: &UncertainSystem,
    spec: &BarrierSpec,
    gamma: &DMatrix<f64>,
    x: &DVector<f64>,
    theta_hat: &DVector<f64>,
) -> (DVector<f64>, f64) {
    constraint_row_inner(sys, spec, gamma, None, x, theta_hat)
}

fn constraint_row_inner(
    sys: &UncertainSystem,
    spec: &BarrierSpec,
    gamma: &DMatrix<f64>,
    alpha_margin: Option<(&ClassK, f64)>,
    x: &DVector<f64>,
    theta_hat: &DVector<f64>,
) -> (DVector<f64>, f64) {
    let dh = spec.dh_dx(x, theta_hat);
    let coeff_u = (dh.transpose() * sys.b(x)).transpose();
    let lambda = lambda_map(theta_hat, spec, gamma, x);
    let drift = sys.f(x) - sys.delta(x).transpose() * lambda;
    let decay = match alpha_margin {
        Some((alpha, margin)) => alpha.eval(spec.h(x, theta_hat) - margin),
        None => 0.0,
    };
    let rhs = -decay - dh.dot(&drift);
    (coeff_u, rhs)
}

/// Barrier-side adaptation law `thetadot = Gamma Delta(x) (dh/dx)'`.
pub fn barrier_adaptation_rhs(
    sys: &UncertainSystem,
    spec: &BarrierSpec,
    gamma: &DMatrix<f64>,
    x: &DVector<f64>,
    theta_hat: &DVector<f64>,
) -> DVector<f64> {
    gamma * (sys.delta(x) * spec.dh_dx(x, theta_hat))
}

/// Lower bound `|v|^2 / (2 h_r(x_r, theta_r))` that the smallest eigenvalue
/// of the adaptation gain must meet for the chosen tightening reference.
pub fn admissible_gain_floor(
    vartheta_max: &DVector<f64>,
    h_r_reference: f64,
) -> Result<f64, BarrierError> {
    if h_r_reference <= 0.0 {
        return Err(BarrierError::NonPositiveReference(h_r_reference));
    }
    Ok(vartheta_max.norm_squared() / (2.0 * h_r_reference))
}

/// Piecewise modified barrier: `sigma^2` above the band, otherwise
/// `sigma^2 - (h_a - sigma)^2`. Continuously differentiable at `h_a = sigma`.
pub fn modified_acbf(h_a: f64, sigma: f64) -> f64 {
    if h_a >= sigma {
        sigma * sigma
    } else {
        sigma * sigma - (h_a - sigma) * (h_a - sigma)
    }
}

/// Derivative of [`modified_acbf`] with respect to `h_a`.
pub fn modified_acbf_slope(h_a: f64, sigma: f64) -> f64 {
    if h_a >= sigma {
        0.0
    } else {
        -2.0 * (h_a - sigma)
    }
}

/// Componentwise clamp of the estimate into its known box. Idempotent; used
/// after every adaptation step so that components pushing outward at an
/// active bound are discarded.
pub fn project_to_box(theta_hat: &DVector<f64>, bounds: &ParameterBox) -> DVector<f64> {
    bounds.clamp(theta_hat)
}

/// Composite certificate `h_r(x, theta_hat) - 0.5 err' G^-1 err` with
/// `err = theta_hat - theta_true`. Diagnostic use only: requires the true
/// parameters.
pub fn composite_barrier(
    spec: &BarrierSpec,
    tight: &TighteningData,
    x: &DVector<f64>,
    theta_hat: &DVector<f64>,
    theta_true: &DVector<f64>,
) -> f64 {
    let err = theta_hat - theta_true;
    let quad = if err.amax() == 0.0 {
        0.0
    } else {
        let sol = tight
            .gamma
            .clone()
            .cholesky()
            .expect("gain validated SPD at construction")
            .solve(&err);
        0.5 * err.dot(&sol)
    };
    spec.h(x, theta_hat) - quad
}
