//! The aircraft pitch plant and the scalar chattering example.

use super::UncertainSystem;
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;

/// Known bounds on the pitch plant parameters `(k_q, l_alpha)`.
pub const PITCH_PARAM_BOUNDS: [(f64, f64); 2] = [(0.1, 0.8), (-3.0, 1.0)];

/// Known bounds on the scalar example's parameter.
pub const EXAMPLE1_THETA_BOUNDS: (f64, f64) = (0.0, 2.0);

/// Simplified pitch dynamics with uncertain damping and moment arm.
///
/// State `x = (theta_pitch, alpha, q)` in radians and rad/s:
///
/// ```text
/// thetadot = q
/// alphadot = q - L(alpha)
/// qdot     = -k_q q - l_alpha L(alpha) + u
/// ```
///
/// with flat-plate lift `L(alpha) = 0.8 sin(2 alpha)`. In the uncertain-system
/// form the parameter rows are `Delta = [[0,0,q],[0,0,L(alpha)]]`, so the
/// `-Delta' theta` term lands in the `qdot` row only.
#[derive(Debug, Clone, Copy)]
pub struct PitchPlant {
    pub k_q: f64,
    pub l_alpha: f64,
}

impl PitchPlant {
    pub fn lift(alpha: f64) -> f64 {
        0.8 * (2.0 * alpha).sin()
    }

    pub fn lift_slope(alpha: f64) -> f64 {
        1.6 * (2.0 * alpha).cos()
    }

    pub fn true_params(&self) -> DVector<f64> {
        DVector::from_column_slice(&[self.k_q, self.l_alpha])
    }
}

/// The pitch plant as an [`UncertainSystem`] with analytic Jacobians and the
/// constant annihilator `B_perp = [e1 e2]`.
pub fn pitch_plant() -> UncertainSystem {
    let f = Arc::new(|x: &DVector<f64>| {
        let alpha = x[1];
        let q = x[2];
        DVector::from_column_slice(&[q, q - PitchPlant::lift(alpha), 0.0])
    });
    let delta = Arc::new(|x: &DVector<f64>| {
        let mut d = DMatrix::zeros(2, 3);
        d[(0, 2)] = x[2];
        d[(1, 2)] = PitchPlant::lift(x[1]);
        d
    });
    let b = Arc::new(|_x: &DVector<f64>| DMatrix::from_column_slice(3, 1, &[0.0, 0.0, 1.0]));
    let b_perp = Arc::new(|_x: &DVector<f64>| {
        DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0])
    });
    let jac_f = Arc::new(|x: &DVector<f64>| {
        let mut j = DMatrix::zeros(3, 3);
        j[(0, 2)] = 1.0;
        j[(1, 1)] = -PitchPlant::lift_slope(x[1]);
        j[(1, 2)] = 1.0;
        j
    });
    let jac_delta_rows = Arc::new(|x: &DVector<f64>| {
        // Row 0 of Delta is (0, 0, q): its Jacobian has a single 1 at (2, 2).
        let mut j0 = DMatrix::zeros(3, 3);
        j0[(2, 2)] = 1.0;
        // Row 1 is (0, 0, L(alpha)): Jacobian entry (2, 1) = L'(alpha).
        let mut j1 = DMatrix::zeros(3, 3);
        j1[(2, 1)] = PitchPlant::lift_slope(x[1]);
        vec![j0, j1]
    });
    let jac_b_cols = Arc::new(|_x: &DVector<f64>| vec![DMatrix::zeros(3, 3)]);
    UncertainSystem::with_jacobians(3, 1, 2, f, delta, b, b_perp, jac_f, jac_delta_rows, jac_b_cols)
}

/// The scalar chattering example `xdot = -theta + u` with `theta > 0`.
pub fn example1_system() -> UncertainSystem {
    UncertainSystem::from_parts(
        1,
        1,
        1,
        |_x: &DVector<f64>| DVector::zeros(1),
        |_x| DMatrix::from_element(1, 1, 1.0),
        |_x| DMatrix::from_element(1, 1, 1.0),
    )
}
