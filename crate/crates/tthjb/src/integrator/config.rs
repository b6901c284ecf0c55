// SPDX-License-Identifier: MIT OR Apache-2.0

//! Solver configuration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Piecewise-constant stiffness reduction factor `ρ(t)`.
///
/// Each entry `[t_start, ρ]` applies from `t_start` until the next entry; times
/// before the first entry use the first value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RhoSchedule(pub Vec<(f64, f64)>);

impl RhoSchedule {
    /// Constant schedule.
    pub fn constant(rho: f64) -> Self {
        Self(vec![(0.0, rho)])
    }

    /// `ρ(t)`.
    pub fn at(&self, t: f64) -> f64 {
        let mut rho = self.0[0].1;
        for &(start, r) in &self.0 {
            if t >= start {
                rho = r;
            } else {
                break;
            }
        }
        rho
    }
}

fn default_p_digits() -> u32 {
    4
}

fn default_power_max_iters() -> usize {
    200
}

fn default_perturbation() -> f64 {
    1e-2
}

/// Parameters of the adaptive explicit Euler solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Final time `T`.
    #[serde(rename = "T")]
    pub t_final: f64,
    /// Upper bound on every step size.
    pub tau_max: f64,
    /// Stiffness reduction factor.
    pub rho_schedule: RhoSchedule,
    /// Relative projection-error tolerance.
    pub delta_proj: f64,
    /// Relative retraction-error tolerance.
    pub delta_rank: f64,
    /// Rounding tolerance (relative) and degree-slice threshold (absolute).
    pub delta_contr: f64,
    /// Number of significant digits the eigenvalue estimate must settle to.
    #[serde(default = "default_p_digits")]
    pub p_digits: u32,
    /// Iteration cap of the eigenvalue estimate.
    #[serde(default = "default_power_max_iters")]
    pub power_max_iters: usize,
    /// Relative size of the seeded rank-one perturbation added to the power
    /// iteration's starting tensor (0 starts exactly at the current iterate).
    #[serde(default = "default_perturbation")]
    pub power_perturbation: f64,
    /// Seed for the perturbation stream.
    #[serde(default)]
    pub seed: u64,
    /// Record per-step wall-clock time in the diagnostics (breaks byte-identity).
    #[serde(default)]
    pub record_wall_time: bool,
}

impl SolverConfig {
    /// Configuration with the given horizon, step bound and constant `ρ`, and
    /// `δ_proj = δ_rank = 0.01`, `δ_contr = 1e-8`.
    pub fn new(t_final: f64, tau_max: f64, rho: f64) -> Self {
        Self {
            t_final,
            tau_max,
            rho_schedule: RhoSchedule::constant(rho),
            delta_proj: 0.01,
            delta_rank: 0.01,
            delta_contr: 1e-8,
            p_digits: default_p_digits(),
            power_max_iters: default_power_max_iters(),
            power_perturbation: default_perturbation(),
            seed: 0,
            record_wall_time: false,
        }
    }

    /// Checks every documented invariant.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return bad(format!("T = {} must be positive and finite", self.t_final));
        }
        if !(self.tau_max > 0.0) {
            return bad(format!("tau_max = {} must be positive", self.tau_max));
        }
        for (name, v) in [
            ("delta_proj", self.delta_proj),
            ("delta_rank", self.delta_rank),
            ("delta_contr", self.delta_contr),
        ] {
            if !(v > 0.0) {
                return bad(format!("{name} = {v} must be positive"));
            }
        }
        if self.rho_schedule.0.is_empty() {
            return bad("rho_schedule must not be empty".into());
        }
        let mut last = f64::NEG_INFINITY;
        for &(start, rho) in &self.rho_schedule.0 {
            if !(rho > 0.0 && rho < 1.0) {
                return bad(format!("rho = {rho} must lie in (0, 1)"));
            }
            if !(start > last) {
                return bad("rho_schedule start times must increase".into());
            }
            last = start;
        }
        if self.p_digits == 0 || self.power_max_iters == 0 {
            return bad("p_digits and power_max_iters must be positive".into());
        }
        if !(self.power_perturbation >= 0.0) {
            return bad("power_perturbation must be non-negative".into());
        }
        Ok(())
    }
}
