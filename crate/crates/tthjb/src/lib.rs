// SPDX-License-Identifier: MIT OR Apache-2.0

//! Tensor-train Legendre solver for the HJB equation satisfied by the negative
//! log-density `v_t = −log π_t` of an Ornstein–Uhlenbeck process,
//!
//! ```text
//! ∂_t v = Δv + x·∇v − ‖∇v‖²,   v_0 = Φ,
//! ```
//!
//! and a score-based sampler that runs the process backwards from `N(0, I)` with
//! the solution's gradients to draw samples from `π* ∝ e^{−Φ}`.
//!
//! Modules, bottom-up:
//!
//! * [`tt_core`] — tensor trains, rounding, dense conversion, checkpoints;
//! * [`poly_basis`] — orthonormal Legendre bases and their transforms;
//! * [`hjb_operators`] — the discretized right-hand side in TT format, potentials;
//! * [`integrator`] — adaptive explicit Euler time stepping;
//! * [`sampler`] — score evaluation and reverse-time sampling;
//! * [`oracles`] — closed-form and brute-force references;
//! * [`cli`] — the `tthjb` command-line front end.

pub mod cli;
pub mod error;
pub mod hjb_operators;
pub mod integrator;
pub mod oracles;
pub mod poly_basis;
pub mod sampler;
pub mod tt_core;

pub use error::{Error, Result};
