//! Set-membership identification.
//!
//! Maintains the axis-aligned set of parameter values consistent with the
//! rate measurements seen so far: each buffered sample contributes the rows
//! `|xdot_est - f(x) + Delta(x)' rho - B(x) u| <= D + E`, the unfalsified
//! interval of each parameter is found with two LPs, and the running box is
//! intersected with it. The box never grows, so the max-error vector fed to
//! the barrier margin is non-increasing and safety is preserved while the
//! conservatism shrinks.

use crate::optkit::{solve_lp, LinearProgram, SolveStatus};
use crate::sysmodel::{SimTrace, UncertainSystem};
use nalgebra::{DMatrix, DVector};
use std::collections::VecDeque;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SmidError {
    #[error("box bounds crossed: lower {lower} > upper {upper} at component {index}")]
    EmptyBox { index: usize, lower: f64, upper: f64 },
    #[error("rate estimation needs at least two samples, trace has {0}")]
    TraceTooShort(usize),
    #[error("index {index} out of range for trace of length {len}")]
    IndexOutOfRange { index: usize, len: usize },
}

/// Axis-aligned parameter set `lower <= theta <= upper`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterBox {
    lower: DVector<f64>,
    upper: DVector<f64>,
}

impl ParameterBox {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self, SmidError> {
        assert_eq!(lower.len(), upper.len());
        for i in 0..lower.len() {
            if lower[i] > upper[i] {
                return Err(SmidError::EmptyBox { index: i, lower: lower[i], upper: upper[i] });
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn from_intervals(intervals: &[(f64, f64)]) -> Result<Self, SmidError> {
        let lower = DVector::from_iterator(intervals.len(), intervals.iter().map(|b| b.0));
        let upper = DVector::from_iterator(intervals.len(), intervals.iter().map(|b| b.1));
        Self::new(lower, upper)
    }

    /// The published bounds on the pitch plant parameters.
    pub fn pitch_default() -> Self {
        Self::from_intervals(&crate::sysmodel::PITCH_PARAM_BOUNDS).unwrap()
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }
    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }
    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    pub fn center(&self) -> DVector<f64> {
        (&self.lower + &self.upper) * 0.5
    }

    /// Componentwise width `upper - lower`.
    pub fn width(&self) -> DVector<f64> {
        &self.upper - &self.lower
    }

    pub fn contains(&self, v: &DVector<f64>, tol: f64) -> bool {
        (0..self.dim()).all(|i| v[i] >= self.lower[i] - tol && v[i] <= self.upper[i] + tol)
    }

    /// Componentwise clamp into the box.
    pub fn clamp(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.dim(), |i, _| v[i].clamp(self.lower[i], self.upper[i]))
    }

    pub fn is_subset_of(&self, other: &ParameterBox, tol: f64) -> bool {
        (0..self.dim())
            .all(|i| self.lower[i] >= other.lower[i] - tol && self.upper[i] <= other.upper[i] + tol)
    }

    /// All `2^p` corner points, in lexicographic order.
    pub fn vertices(&self) -> Vec<DVector<f64>> {
        let p = self.dim();
        (0..(1usize << p))
            .map(|mask| {
                DVector::from_fn(p, |i, _| {
                    if mask & (1 << i) != 0 {
                        self.upper[i]
                    } else {
                        self.lower[i]
                    }
                })
            })
            .collect()
    }
}

/// Maximum possible parameter error vector for a box: `sup - inf` per
/// component.
pub fn max_error_vector(bounds: &ParameterBox) -> DVector<f64> {
    bounds.width()
}

/// One buffered sample: state, applied input, rate estimate and the rate
/// estimation error bound attached to it (doubled for one-sided estimates).
#[derive(Debug, Clone)]
pub struct BufferEntry {
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    pub xdot_est: DVector<f64>,
    pub rate_error: f64,
}

/// Sliding window of rate measurements feeding the bound-update LPs.
#[derive(Debug, Clone)]
pub struct MeasurementBuffer {
    entries: VecDeque<BufferEntry>,
    capacity: usize,
    /// Disturbance / noise bound `D` in the unfalsified-set definition.
    pub disturbance_bound: f64,
}

impl MeasurementBuffer {
    pub fn new(capacity: usize, disturbance_bound: f64) -> Self {
        assert!(capacity > 0 && disturbance_bound > 0.0);
        Self { entries: VecDeque::with_capacity(capacity), capacity, disturbance_bound }
    }

    pub fn push(&mut self, entry: BufferEntry) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(entry);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
    pub fn entries(&self) -> impl Iterator<Item = &BufferEntry> {
        self.entries.iter()
    }
}

/// Rate estimate with the multiplier to apply to the nominal rate error
/// bound (1 for central differences, 2 for one-sided boundary estimates).
#[derive(Debug, Clone)]
pub struct RateEstimate {
    pub rate: DVector<f64>,
    pub error_scale: f64,
}

/// Estimate the state rate at a trace index by finite differences: central
/// in the interior, one-sided (with doubled error bound) at the ends.
pub fn estimate_rate(trace: &SimTrace, index: usize) -> Result<RateEstimate, SmidError> {
    let len = trace.len();
    if len < 2 {
        return Err(SmidError::TraceTooShort(len));
    }
    if index >= len {
        return Err(SmidError::IndexOutOfRange { index, len });
    }
    let dt = trace.time[1] - trace.time[0];
    if index == 0 {
        Ok(RateEstimate {
            rate: (&trace.states[1] - &trace.states[0]) / dt,
            error_scale: 2.0,
        })
    } else if index == len - 1 {
        Ok(RateEstimate {
            rate: (&trace.states[len - 1] - &trace.states[len - 2]) / dt,
            error_scale: 2.0,
        })
    } else {
        Ok(RateEstimate {
            rate: (&trace.states[index + 1] - &trace.states[index - 1]) / (2.0 * dt),
            error_scale: 1.0,
        })
    }
}

/// Result of a bound update. `lp_infeasible` flags a window whose rows were
/// inconsistent with the current box (disturbance bound too small for the
/// data); the box is then returned unchanged, which keeps safety intact
/// since the error bounds only ever shrink.
#[derive(Debug, Clone)]
pub struct BoundsUpdate {
    pub bounds: ParameterBox,
    pub lp_infeasible: bool,
}

/// Shrink the parameter box against the buffered measurements.
///
/// For each parameter two LPs (min and max of that component) run over the
/// absolute-value rows of every buffered sample with slack `D + E`, bounded
/// by the current box; the new box is the elementwise intersection with the
/// current one. Rows whose `Delta` column has negligible norm carry no
/// information and are pruned.
pub fn update_bounds(
    buffer: &MeasurementBuffer,
    current: &ParameterBox,
    sys: &UncertainSystem,
) -> BoundsUpdate {
    let p = current.dim();
    if buffer.is_empty() {
        return BoundsUpdate { bounds: current.clone(), lp_infeasible: false };
    }

    // Assemble pruned constraint rows: +-(Delta' rho)_i <= (D + E) -+ c_i.
    let mut rows: Vec<DVector<f64>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    for entry in buffer.entries() {
        let slack = buffer.disturbance_bound + entry.rate_error;
        let c = &entry.xdot_est - sys.f(&entry.x) - sys.b(&entry.x) * &entry.u;
        let delta_t = sys.delta(&entry.x).transpose();
        for i in 0..delta_t.nrows() {
            let row = delta_t.row(i).transpose().into_owned();
            if row.norm() < 1e-8 {
                continue;
            }
            rows.push(row.clone());
            rhs.push(slack - c[i]);
            rows.push(-row);
            rhs.push(slack + c[i]);
        }
    }
    if rows.is_empty() {
        return BoundsUpdate { bounds: current.clone(), lp_infeasible: false };
    }

    let mut mat = DMatrix::zeros(rows.len(), p);
    for (r, row) in rows.iter().enumerate() {
        mat.row_mut(r).copy_from(&row.transpose());
    }
    let rhs = DVector::from_vec(rhs);
    let bounds: Vec<(f64, f64)> =
        (0..p).map(|i| (current.lower()[i], current.upper()[i])).collect();

    let mut new_lower = current.lower().clone();
    let mut new_upper = current.upper().clone();
    for i in 0..p {
        for sense in [1.0, -1.0] {
            let mut cost = DVector::zeros(p);
            cost[i] = sense;
            let lp = LinearProgram {
                cost,
                ineq_matrix: mat.clone(),
                ineq_rhs: rhs.clone(),
                var_bounds: Some(bounds.clone()),
            };
            let report = match solve_lp(&lp) {
                Ok(r) => r,
                Err(_) => return BoundsUpdate { bounds: current.clone(), lp_infeasible: true },
            };
            match report.status {
                SolveStatus::Optimal => {
                    if sense > 0.0 {
                        // Intersection: the new lower bound can only move up.
                        new_lower[i] = new_lower[i].max(report.solution[i]);
                    } else {
                        new_upper[i] = new_upper[i].min(report.solution[i]);
                    }
                }
                _ => return BoundsUpdate { bounds: current.clone(), lp_infeasible: true },
            }
        }
        if new_lower[i] > new_upper[i] {
            // Numerical crossing at LP tolerance: collapse to the midpoint.
            let mid = 0.5 * (new_lower[i] + new_upper[i]);
            new_lower[i] = mid;
            new_upper[i] = mid;
        }
    }

    BoundsUpdate {
        bounds: ParameterBox { lower: new_lower, upper: new_upper },
        lp_infeasible: false,
    }
}
