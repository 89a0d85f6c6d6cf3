//! Local Volt/Var control for radial distribution feeders.
//!
//! The crate implements a two-stage pipeline:
//!
//! 1. **Learn.** Solve a loss-minimizing reactive-power OPF over many load
//!    scenarios, collect per-DER pairs (local voltage, optimal set point),
//!    and fit one monotone bounded curve per DER to that cloud. The curve
//!    class (nonpositive-weight single-hidden-layer tanh networks) is
//!    monotone nonincreasing and range-limited *by construction*, so any
//!    trained artifact is a valid droop-style characteristic.
//!
//! 2. **Control.** Run the incremental local update
//!    `q(t+1) = q(t) + eps * (phi(v(t)) - q(t))` per DER. For any
//!    `eps < min(1, 2 / (1 + ||X|| M))`, where `X` is the DER-block voltage
//!    sensitivity and `M` bounds the curve slopes, the closed loop is a local
//!    contraction; fixed points lie exactly on the graph of the curves.
//!
//! Everything runs on a linearized feeder model (`linear`), validated
//! against a fixed-point nonlinear power-flow oracle (`powerflow`). The
//! simulation harness (`sim`) replays minute-resolution profiles and
//! compares controlled against uncontrolled operation.
//!
//! With the default `parallel` feature, scenario sweeps, per-DER training
//! and batch simulations fan out over rayon; disabling the feature swaps in
//! sequential loops with identical outputs.

pub mod admittance;
pub mod control;
pub mod dataset;
pub mod error;
pub mod fixtures;
pub mod io;
pub mod linear;
pub mod network;
pub mod nn;
pub mod opf;
mod par;
pub mod powerflow;
pub mod profiles;
pub mod sim;
pub mod stability;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
