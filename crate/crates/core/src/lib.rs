//! Safe adaptive control for uncertain nonlinear systems.
//!
//! The crate couples three mechanisms into one per-step controller:
//!
//! * robust adaptive control barrier functions that keep a tightened safe
//!   set forward invariant under bounded parameter error ([`barriers`]),
//! * set-membership identification that shrinks the parameter error bounds
//!   online from rate measurements ([`smid`]),
//! * contraction-metric tracking, where a Riemannian energy computed along
//!   Chebyshev-pseudospectral geodesics acts as the incremental Lyapunov
//!   function ([`metrics`], [`geodesics`]).
//!
//! Everything runs on small dense problems; [`optkit`] provides the LP, QP
//! and smooth descent solvers sized for them, and [`sysmodel`] supplies the
//! uncertain-system representation, the aircraft pitch plant and a fixed-step
//! simulation harness. [`safeloop`] assembles the per-step controller.

pub mod barriers;
pub mod geodesics;
pub mod metrics;
pub mod optkit;
pub mod safeloop;
pub mod smid;
pub mod sysmodel;
