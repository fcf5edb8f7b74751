//! Cooperative overtaking safety stack for two-lane roads.
//!
//! The crate is organised around five pieces:
//!
//! - [`kinematics`] — the 2⁺ overtaking model: lane-change geometry,
//!   time-to-overtake (TTO), time-to-collision (TTC) and the safety verdict.
//! - [`localization`] — GPS/INS fusion with a linear Kalman filter over the
//!   `[pos_x, pos_y, vel_x, vel_y]` state.
//! - [`protocol`] — the ACK/NACK overtaking-intention protocol as a pair of
//!   deterministic finite state machines with timeout/resend and request
//!   numbering.
//! - [`netsim`] — a seeded discrete-event simulator with a range-limited,
//!   lossy broadcast channel that drives the protocol FSMs.
//! - [`harness`] — Monte Carlo experiments: scenario generation, a fine-step
//!   ground-truth collision oracle, and the mis-prediction-vs-communication-
//!   range sweep.
//!
//! Everything is seedable and deterministic: identical inputs and seeds
//! produce bit-identical traces and experiment results.

pub mod harness;
pub mod kinematics;
pub mod localization;
pub mod netsim;
pub mod protocol;
