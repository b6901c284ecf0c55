// SPDX-License-Identifier: MIT OR Apache-2.0

//! Adaptive explicit Euler solver for the coefficient ODE
//!
//! ```text
//! Ȧ = L·A + P·NL(A)
//! ```
//!
//! Every step takes the smallest of four step sizes: the bound `τ_max`, a
//! stiffness bound from a power iteration on the linearized operator, a bound on
//! the relative degree-projection error and a bound on the relative retraction
//! error. After the step, high degrees whose coefficient slice became negligible
//! are dropped and the ranks are recompressed.

mod config;

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use config::{RhoSchedule, SolverConfig};

use crate::error::{Error, Result};
use crate::hjb_operators::{apply_lin, apply_nonlin, apply_stiffness, project_degree};
use crate::poly_basis::PolySpace;
use crate::sampler::covariance_error;
use crate::tt_core::{Core, RoundMode, TensorTrain};

/// Time-stamped coefficient tensor with its current degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionSnapshot {
    pub t: f64,
    pub coeffs: TensorTrain,
    pub degrees: Vec<usize>,
}

impl SolutionSnapshot {
    /// Snapshot whose degrees are read off the mode sizes.
    pub fn new(t: f64, coeffs: TensorTrain) -> Self {
        let degrees = coeffs.mode_sizes().iter().map(|n| n - 1).collect();
        Self { t, coeffs, degrees }
    }

    /// Interior ranks.
    pub fn ranks(&self) -> Vec<usize> {
        self.coeffs.interior_ranks()
    }

    /// The polynomial space of this snapshot (intervals of `base`, own degrees).
    pub fn space(&self, base: &PolySpace) -> Result<PolySpace> {
        base.with_degrees(&self.degrees)
    }
}

/// Per-step record written to the diagnostics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub step: usize,
    /// Time at the end of the step.
    pub t: f64,
    pub tau: f64,
    pub tau_lambda: f64,
    pub tau_proj: f64,
    pub tau_rank: f64,
    /// Upper bound on the dominant eigenvalue magnitude (0 when stationary).
    pub lambda_bar: f64,
    /// Interior ranks after the step.
    pub ranks: Vec<usize>,
    /// Degrees after the step.
    pub degrees: Vec<usize>,
    pub cov_err: f64,
    /// Wall-clock milliseconds of the step; `null` unless explicitly requested.
    pub wall_ms: Option<f64>,
    pub power_iters: usize,
    pub proj_rel_err: f64,
    pub rank_rel_err: f64,
}

/// Reason a solve stopped before reaching `T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverAbort {
    pub t: f64,
    pub message: String,
}

/// Sequence of snapshots on the adaptive time grid plus diagnostics.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Intervals (and initial degrees) of the discretization.
    pub space: PolySpace,
    pub snapshots: Vec<SolutionSnapshot>,
    pub diagnostics: Vec<StepDiagnostics>,
    /// Set when the solve aborted; the snapshots up to the failure are kept.
    pub abort: Option<SolverAbort>,
    /// Initial interior ranks (rank-adaptation cap).
    pub initial_ranks: Vec<usize>,
}

impl Trajectory {
    /// Stored times.
    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.t).collect()
    }

    pub fn final_snapshot(&self) -> &SolutionSnapshot {
        self.snapshots.last().expect("a trajectory holds at least the initial snapshot")
    }

    /// True when the solve reached `T` without aborting.
    pub fn is_complete(&self, t_final: f64) -> bool {
        self.abort.is_none() && self.final_snapshot().t == t_final
    }

    /// Diagnostics as JSON lines.
    pub fn diagnostics_jsonl(&self) -> String {
        let mut s = String::new();
        for d in &self.diagnostics {
            s.push_str(&serde_json::to_string(d).expect("diagnostics serialize"));
            s.push('\n');
        }
        s
    }
}

/// Outcome of the eigenvalue estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerEstimate {
    /// `|λ| + ε_p`, or 0 when stationary.
    pub lambda_bar: f64,
    /// Final signed Rayleigh-type estimate `⟨X̂_k, X_{k+1}⟩`.
    pub lambda: f64,
    pub iters: usize,
    /// Set when `|λ| < 1e-14`.
    pub stationary: bool,
}

/// `(exponent, leading p digits)` of a non-zero value, with sign.
fn significant_digits(x: f64, p: u32) -> Option<(i32, i64)> {
    if x == 0.0 || !x.is_finite() {
        return None;
    }
    let e = x.abs().log10().floor() as i32;
    let scaled = x.abs() / 10f64.powi(e - p as i32 + 1);
    let m = scaled.floor() as i64;
    Some((e, if x < 0.0 { -m } else { m }))
}

/// Seeded rank-one Gaussian tensor used to perturb the power-iteration start.
fn perturbation(mode_sizes: &[usize], seed: u64, t: f64) -> TensorTrain {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ t.to_bits().rotate_left(29));
    let vectors: Vec<Vec<f64>> = mode_sizes
        .iter()
        .map(|&n| (0..n).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    TensorTrain::rank_one(&vectors).expect("finite perturbation")
}

/// `‖H_Y·X̂_k‖` relative to the largest value seen so far below which the unit
/// iterate counts as annihilated (round-off level of a nilpotent `H_Y`).
const NULL_ITERATE: f64 = 1e-8;

/// Power iteration on `H_Y = L + 2·P·NL_Y` with retraction to the ranks of `Y`.
///
/// The iteration starts from `Y` plus a seeded rank-one perturbation of relative
/// size `cfg.power_perturbation`; without it the iterates stay in the
/// `H_Y`-invariant subspace generated by `Y` and can miss the dominant eigenvalue.
/// It stops once the `p`-th significant digit of `λ^k` repeats, and returns
/// `λ̄ = |λ^k| + 10^{−(P+p)}` with `P = ⌈−log₁₀|λ^k|⌉`.
pub fn power_iteration_bound(y: &SolutionSnapshot, space: &PolySpace, cfg: &SolverConfig) -> Result<PowerEstimate> {
    let cap = y.ranks();
    let norm_y = y.coeffs.norm();
    let mut x = y.coeffs.clone();
    if cfg.power_perturbation > 0.0 && norm_y > 0.0 {
        let r = perturbation(&x.mode_sizes(), cfg.seed, y.t);
        let scale = cfg.power_perturbation * norm_y / r.norm();
        x = x.add_scaled(&r, scale)?;
    }
    let mut lambda = 0.0;
    let mut prev = None;
    let mut iters = 0;
    let mut scale: f64 = 0.0;
    for _ in 0..cfg.power_max_iters {
        let nx = x.norm();
        if nx == 0.0 {
            lambda = 0.0;
            break;
        }
        let xh = x.scaled(1.0 / nx);
        let next = apply_stiffness(&y.coeffs, &xh, space)?.round(&RoundMode::MaxRanks(cap.clone()))?;
        iters += 1;
        // `H_Y` annihilated the unit iterate (nilpotent stationary sector): any
        // further normalization would only amplify round-off
        let n_next = next.norm();
        scale = scale.max(n_next);
        if n_next <= NULL_ITERATE * scale {
            lambda = 0.0;
            break;
        }
        lambda = xh.inner(&next)?;
        let digits = significant_digits(lambda, cfg.p_digits);
        if digits.is_none() || digits == prev {
            break;
        }
        prev = digits;
        x = next;
    }
    if !lambda.is_finite() {
        return Err(Error::NonFinite(format!("eigenvalue estimate at t = {}", y.t)));
    }
    if lambda.abs() < 1e-14 {
        return Ok(PowerEstimate {
            lambda_bar: 0.0,
            lambda,
            iters,
            stationary: true,
        });
    }
    let p_pos = (-lambda.abs().log10()).ceil() as i32;
    let eps = 10f64.powi(-(p_pos + cfg.p_digits as i32));
    Ok(PowerEstimate {
        lambda_bar: lambda.abs() + eps,
        lambda,
        iters,
        stationary: false,
    })
}

/// Maximal stable step `2ρ/|λ̄|`; `+∞` for the stationary case.
pub fn stepsize_stiffness(lambda_bar: f64, rho: f64) -> f64 {
    if lambda_bar == 0.0 {
        f64::INFINITY
    } else {
        2.0 * rho / lambda_bar.abs()
    }
}

/// Result of the projection criterion, with the projected nonlinear term for reuse.
#[derive(Debug, Clone)]
pub struct ProjectionCheck {
    pub tau_proj: f64,
    pub rel_err: f64,
    /// `P·NL(Y)` at the degrees of `Y`.
    pub projected_nl: TensorTrain,
}

/// Relative projection errors at or below this multiple of the machine epsilon are
/// round-off in the difference norm and count as an exact projection.
const PROJECTION_ROUNDOFF: f64 = 64.0 * f64::EPSILON;

/// `τ_proj = δ_proj / (‖P·NL − NL‖/‖NL‖)`, or `τ_max` when the projection is exact.
///
/// The discarded part is measured as the norm of the TT difference `NL − P·NL`
/// (with `P·NL` zero-padded back to the full degrees) rather than through
/// `‖NL‖² − ‖P·NL‖²`, whose cancellation would leave `O(√ε)` noise.
pub fn stepsize_projection(y: &SolutionSnapshot, space: &PolySpace, cfg: &SolverConfig) -> Result<ProjectionCheck> {
    let (nl, _) = apply_nonlin(&y.coeffs, space)?;
    let projected_nl = project_degree(&nl, &y.degrees)?;
    let n_full = nl.norm();
    let rel_err = if n_full == 0.0 {
        0.0
    } else {
        let padded = zero_pad_modes(&projected_nl, &nl.mode_sizes())?;
        let rel = nl.add_scaled(&padded, -1.0)?.norm() / n_full;
        if rel <= PROJECTION_ROUNDOFF {
            0.0
        } else {
            rel
        }
    };
    let tau_proj = if rel_err == 0.0 {
        cfg.tau_max
    } else {
        cfg.delta_proj / rel_err
    };
    Ok(ProjectionCheck {
        tau_proj,
        rel_err,
        projected_nl,
    })
}

/// Embeds `a` into larger mode sizes, filling the new slices with zeros.
fn zero_pad_modes(a: &TensorTrain, sizes: &[usize]) -> Result<TensorTrain> {
    let cores = a
        .cores()
        .iter()
        .zip(sizes)
        .map(|(c, &n)| {
            let mut out = Core::zeros(c.left_rank(), n, c.right_rank());
            for x in 0..c.left_rank() {
                for i in 0..c.mode_size() {
                    for y in 0..c.right_rank() {
                        out.set(x, i, y, c.get(x, i, y));
                    }
                }
            }
            out
        })
        .collect();
    TensorTrain::new(cores)
}

/// Relative retraction error of `Y + τ·rhs` for rounding to `target_ranks`.
fn retraction_error(y: &TensorTrain, rhs: &TensorTrain, tau: f64, target_ranks: &[usize]) -> Result<f64> {
    let ybar = y.add_scaled(rhs, tau)?;
    let r = ybar.round_with_error(&RoundMode::MaxRanks(target_ranks.to_vec()))?;
    Ok(if r.norm == 0.0 { 0.0 } else { r.error / r.norm })
}

/// Largest `τ ∈ (0, tau_init]` whose retraction error is ≤ `δ_rank`: halving from
/// `tau_init`, then bisection to relative width `1e-2` (at most 20 bisections).
/// Returns `(τ_rank, relative error at τ_rank)`.
pub fn stepsize_retraction(
    y: &SolutionSnapshot,
    rhs: &TensorTrain,
    target_ranks: &[usize],
    tau_init: f64,
    cfg: &SolverConfig,
) -> Result<(f64, f64)> {
    let mut tau = tau_init;
    let mut err = retraction_error(&y.coeffs, rhs, tau, target_ranks)?;
    let mut halvings = 0;
    while err > cfg.delta_rank {
        if halvings == 40 {
            return Err(Error::RankBudget {
                t: y.t,
                tau,
                rel_err: err,
            });
        }
        tau *= 0.5;
        halvings += 1;
        err = retraction_error(&y.coeffs, rhs, tau, target_ranks)?;
    }
    if halvings == 0 {
        return Ok((tau, err));
    }
    let (mut lo, mut lo_err, mut hi) = (tau, err, 2.0 * tau);
    for _ in 0..20 {
        if (hi - lo) / hi <= 1e-2 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let e = retraction_error(&y.coeffs, rhs, mid, target_ranks)?;
        if e <= cfg.delta_rank {
            lo = mid;
            lo_err = e;
        } else {
            hi = mid;
        }
    }
    Ok((lo, lo_err))
}

/// Right-hand side `L·Y + P·NL(Y)` at the degrees of `Y`.
pub fn rhs(y: &SolutionSnapshot, space: &PolySpace, projected_nl: Option<&TensorTrain>) -> Result<TensorTrain> {
    let lin = apply_lin(&y.coeffs, space)?;
    match projected_nl {
        Some(p) => lin.add_scaled(p, 1.0),
        None => lin.add_scaled(&crate::hjb_operators::apply_nonlin_projected(&y.coeffs, space)?, 1.0),
    }
}

/// One explicit Euler step `Ȳ = Y + τ(L·Y + P·NL(Y))`, retracted to `target_ranks`
/// and rounded at relative tolerance `δ_contr` in a single sweep.
pub fn euler_step(
    y: &SolutionSnapshot,
    tau: f64,
    target_ranks: &[usize],
    space: &PolySpace,
    cfg: &SolverConfig,
) -> Result<SolutionSnapshot> {
    let f = rhs(y, space, None)?;
    euler_step_with_rhs(y, &f, tau, target_ranks, cfg)
}

fn euler_step_with_rhs(
    y: &SolutionSnapshot,
    f: &TensorTrain,
    tau: f64,
    target_ranks: &[usize],
    cfg: &SolverConfig,
) -> Result<SolutionSnapshot> {
    let ybar = y.coeffs.add_scaled(f, tau)?;
    if !ybar.is_finite() {
        return Err(Error::NonFinite(format!("Euler step from t = {}", y.t)));
    }
    let next = ybar.round(&RoundMode::Both(cfg.delta_contr, target_ranks.to_vec()))?;
    Ok(SolutionSnapshot {
        t: y.t + tau,
        coeffs: next,
        degrees: y.degrees.clone(),
    })
}

/// Frobenius norm of the slice with `α_k = n_k` (top degree in dimension `k`).
pub fn top_slice_norm(a: &TensorTrain, k: usize) -> f64 {
    let o = a.orthogonalized_at(k);
    let core = o.core(k);
    let top = core.mode_size() - 1;
    let mut s = 0.0;
    for x in 0..core.left_rank() {
        for y in 0..core.right_rank() {
            let v = core.get(x, top, y);
            s += v * v;
        }
    }
    s.sqrt()
}

/// Lowest degree the adaptive truncation may reach (the attractor is quadratic).
pub const DEGREE_FLOOR: usize = 2;

/// Drops the highest degree in every dimension whose top slice has norm ≤ `δ_contr`
/// (absolute), repeating until nothing changes; never below degree 2.
pub fn degree_truncate(y: &SolutionSnapshot, delta_contr: f64) -> Result<SolutionSnapshot> {
    let mut out = y.clone();
    loop {
        let mut fired = false;
        for k in 0..out.degrees.len() {
            if out.degrees[k] > DEGREE_FLOOR && top_slice_norm(&out.coeffs, k) <= delta_contr {
                out.degrees[k] -= 1;
                let sizes: Vec<_> = out.degrees.iter().map(|n| n + 1).collect();
                out.coeffs = out.coeffs.truncate_modes(&sizes)?;
                fired = true;
            }
        }
        if !fired {
            return Ok(out);
        }
    }
}

/// Rank cap `min(max(r_current, 2), max(r0, 2))`.
pub fn rank_cap(current: &[usize], initial: &[usize]) -> Vec<usize> {
    current
        .iter()
        .zip(initial)
        .map(|(&r, &r0)| r.max(2).min(r0.max(2)))
        .collect()
}

/// Recompression to the rank cap with relative tolerance `δ_contr`.
pub fn rank_adapt(y: &SolutionSnapshot, initial_ranks: &[usize], delta_contr: f64) -> Result<SolutionSnapshot> {
    let cap = rank_cap(&y.ranks(), initial_ranks);
    Ok(SolutionSnapshot {
        t: y.t,
        coeffs: y.coeffs.round(&RoundMode::Both(delta_contr, cap))?,
        degrees: y.degrees.clone(),
    })
}

/// Observer called with every accepted snapshot (the initial one without diagnostics).
pub type Observer<'a> = dyn FnMut(&SolutionSnapshot, Option<&StepDiagnostics>) -> Result<()> + 'a;

/// Solves from `t = 0` to `T` starting at `phi`.
pub fn solve_hjb(phi: &TensorTrain, space: &PolySpace, cfg: &SolverConfig) -> Result<Trajectory> {
    solve_hjb_with(phi, space, cfg, &mut |_, _| Ok(()))
}

/// As [`solve_hjb`], streaming every snapshot to `observer`.
///
/// Configuration and shape errors are returned as `Err`; numerical failures during
/// the run stop the loop and are reported in [`Trajectory::abort`].
pub fn solve_hjb_with(
    phi: &TensorTrain,
    space: &PolySpace,
    cfg: &SolverConfig,
    observer: &mut Observer<'_>,
) -> Result<Trajectory> {
    cfg.validate()?;
    if phi.mode_sizes() != space.mode_sizes() {
        return Err(Error::ShapeMismatch(format!(
            "potential mode sizes {:?} vs space {:?}",
            phi.mode_sizes(),
            space.mode_sizes()
        )));
    }
    let initial = SolutionSnapshot::new(0.0, phi.clone());
    observer(&initial, None)?;
    let mut traj = Trajectory {
        space: space.clone(),
        initial_ranks: initial.ranks(),
        snapshots: vec![initial],
        diagnostics: Vec::new(),
        abort: None,
    };
    let mut step = 0;
    loop {
        let y = traj.final_snapshot().clone();
        if y.t >= cfg.t_final {
            break;
        }
        let started = Instant::now();
        match advance(&y, &traj, cfg, step) {
            Ok((next, mut diag)) => {
                if cfg.record_wall_time {
                    diag.wall_ms = Some(started.elapsed().as_secs_f64() * 1e3);
                }
                observer(&next, Some(&diag))?;
                traj.snapshots.push(next);
                traj.diagnostics.push(diag);
                step += 1;
            }
            Err(e) => {
                traj.abort = Some(SolverAbort {
                    t: y.t,
                    message: e.to_string(),
                });
                break;
            }
        }
    }
    Ok(traj)
}

/// One accepted step of the adaptive scheme.
fn advance(
    y: &SolutionSnapshot,
    traj: &Trajectory,
    cfg: &SolverConfig,
    step: usize,
) -> Result<(SolutionSnapshot, StepDiagnostics)> {
    let space = y.space(&traj.space)?;
    let t_final = cfg.t_final;
    let remaining = t_final - y.t;

    let power = power_iteration_bound(y, &space, cfg)?;
    let tau_lambda = stepsize_stiffness(power.lambda_bar, cfg.rho_schedule.at(y.t));
    let proj = stepsize_projection(y, &space, cfg)?;
    let f = rhs(y, &space, Some(&proj.projected_nl))?;
    let target = rank_cap(&y.ranks(), &traj.initial_ranks);
    let tau_init = if step == 0 {
        cfg.tau_max
    } else {
        cfg.tau_max.min(tau_lambda).min(proj.tau_proj).min(remaining)
    };
    let (tau_rank, rank_rel_err) = stepsize_retraction(y, &f, &target, tau_init, cfg)?;
    let tau = cfg
        .tau_max
        .min(tau_lambda)
        .min(proj.tau_proj)
        .min(tau_rank)
        .min(remaining);
    if !(tau >= 1e-12 * t_final) {
        return Err(Error::StepUnderflow { t: y.t, tau });
    }
    let mut next = euler_step_with_rhs(y, &f, tau, &target, cfg)?;
    // land exactly on T
    if tau >= remaining || next.t >= t_final {
        next.t = t_final;
    }
    let next = degree_truncate(&next, cfg.delta_contr)?;
    let next = rank_adapt(&next, &traj.initial_ranks, cfg.delta_contr)?;
    let cov_err = covariance_error(&next, &traj.space)?;
    let diag = StepDiagnostics {
        step,
        t: next.t,
        tau,
        tau_lambda,
        tau_proj: proj.tau_proj,
        tau_rank,
        lambda_bar: power.lambda_bar,
        ranks: next.ranks(),
        degrees: next.degrees.clone(),
        cov_err,
        wall_ms: None,
        power_iters: power.iters,
        proj_rel_err: proj.rel_err,
        rank_rel_err,
    };
    Ok((next, diag))
}

/// Snapshot at an arbitrary `t* ∈ [0, T]`: the stored snapshot at the largest time
/// `t̄ ≤ t*`, advanced by one Euler step of size `t* − t̄` when `t* ≠ t̄`.
pub fn evaluate_at_time(traj: &Trajectory, t_star: f64, cfg: &SolverConfig) -> Result<SolutionSnapshot> {
    let t_last = traj.final_snapshot().t;
    if !(t_star >= 0.0 && t_star <= t_last) {
        return Err(Error::InvalidInput(format!("t* = {t_star} outside [0, {t_last}]")));
    }
    let idx = traj.snapshots.partition_point(|s| s.t <= t_star) - 1;
    let base = &traj.snapshots[idx];
    if base.t == t_star {
        return Ok(base.clone());
    }
    let space = base.space(&traj.space)?;
    let target = rank_cap(&base.ranks(), &traj.initial_ranks);
    let mut out = euler_step(base, t_star - base.t, &target, &space, cfg)?;
    out.t = t_star;
    Ok(out)
}
