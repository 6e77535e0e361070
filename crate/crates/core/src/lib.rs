//! Certificates for how much passivity survives a digital implementation.
//!
//! A continuous controller that is provably passive loses part of that
//! margin once it runs on a sampled platform with quantized inputs, states
//! and outputs. This crate quantifies the loss and certifies what remains:
//!
//! - [`systems`]: linear state-space models, exact zero-order-hold
//!   discretization, simulation, quadratic storage functions, supply rates.
//! - [`analysis`]: passivity-index verification for continuous and sampled
//!   systems, rate-gain estimation, incremental-stability certificates,
//!   finite-window detectability, state-norm bounds.
//! - [`degradation`]: closed-form index degradation under sampling and
//!   under lattice quantization, the largest admissible sampling period,
//!   and a deterministic search over the free parameters of the bounds.
//! - [`abstraction`]: lattice quantizers, symbolic models of sampled
//!   systems, abstraction-parameter feasibility, finite transition systems
//!   and approximate-bisimulation checking.
//! - [`closedloop`]: index composition across a plant/controller feedback
//!   loop, the feasible closed-loop index region, a loop simulator with a
//!   per-step dissipation monitor, and ultimate-boundedness certificates.
//! - [`oracle`]: slow reference computations for cross-checking.
//!
//! All verdicts are numerical with explicit, documented tolerances; every
//! routine that can fail returns [`Error`] rather than panicking on bad
//! input.

pub mod abstraction;
pub mod analysis;
pub mod closedloop;
pub mod degradation;
pub mod error;
pub mod linalg;
pub mod oracle;
pub mod systems;

pub use error::{Error, Result};
