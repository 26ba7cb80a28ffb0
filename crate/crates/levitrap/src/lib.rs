//! Trajectory planning and verification for acoustic levitation displays.
//!
//! A levitated particle traces a reference path q(θ) while being dragged by an
//! acoustic trap whose restoring force is both bounded and non-invertible in the
//! trap position. This crate turns a geometric path into a physically feasible,
//! near-time-optimal trap trajectory and verifies it by forward simulation:
//!
//! * [`paths`] — reference curves (builtins + waypoint splines), arc length,
//!   naive baseline timings.
//! * [`acoustics`] — transducer-array pressure field, twin-trap activations and
//!   the Gor'kov force oracle used for calibration.
//! * [`forcemodel`] — closed-form trap force models (axis-symmetric sinusoidal,
//!   plus legacy spring/per-axis variants) and least-squares calibration
//!   against the oracle.
//! * [`ocp`] — the timing problem: a trapezoidal-collocation transcription of
//!   the minimum-time path-following problem, solved by an augmented-Lagrangian
//!   projected-Newton method.
//! * [`trapsolve`] — recovery of trap positions from the solved timing law
//!   (dog-leg inversion of the force model) and device-rate resampling.
//! * [`sim`] — RK4 particle simulation, perturbed feasibility trials and
//!   tracking metrics.
//!
//! All quantities are SI unless a name says otherwise.

pub mod acoustics;
pub mod forcemodel;
pub mod ocp;
pub mod par;
pub mod paths;
pub mod sim;
pub mod trapsolve;
