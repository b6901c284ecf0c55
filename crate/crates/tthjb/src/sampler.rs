// SPDX-License-Identifier: MIT OR Apache-2.0

//! Score evaluation from TT snapshots and reverse-time sampling.
//!
//! With `v_t = −log π_t` and the forward process `dX = −X dt + √2 dW`, a particle
//! started from `N(0, I)` is pushed backwards along the solver's time grid by
//!
//! ```text
//! z ← z + [z − (2−λ)∇v_{T−s_n}(z)]·τ_n + √(2(1−λ)τ_n)·ξ
//! ```
//!
//! (`λ = 1` is the deterministic probability-flow ODE), optionally followed after
//! every step by `L` unadjusted Langevin steps `z ← z − τ∇v(z) + √(2τ)·ξ` targeting
//! the intermediate density just reached.
//!
//! Each particle draws its normals from its own ChaCha8 stream (stream index =
//! particle index), so a batch is reproducible independently of thread scheduling.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hjb_operators::extract_quadratic;
use crate::integrator::{evaluate_at_time, SolutionSnapshot, SolverConfig, Trajectory};
use crate::poly_basis::PolySpace;

/// Name of the normal transform, recorded in run metadata.
pub const NORMAL_TRANSFORM: &str = "rand_distr 0.5 StandardNormal (ziggurat) over ChaCha8 streams";

/// Which intermediate density the Langevin steps after reverse step `n` target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LangevinTarget {
    /// The density at the time the reverse step just arrived at (`T − s_{n+1}`),
    /// i.e. the marginal the particle currently represents; the final Langevin
    /// stage targets `Φ` itself.
    #[default]
    PostStep,
    /// The density whose score drove the reverse step (`T − s_n`).
    PreStep,
}

fn default_particles() -> usize {
    1000
}

/// Sampler parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Reverse-process parameter `λ ∈ [0, 1]`.
    pub lambda: f64,
    #[serde(default = "default_particles")]
    pub n_particles: usize,
    #[serde(default)]
    pub langevin_steps: usize,
    #[serde(default)]
    pub langevin_tau: f64,
    #[serde(default)]
    pub seed: u64,
    /// Project particles onto the domain after every update.
    #[serde(default)]
    pub clamp_to_domain: bool,
    #[serde(default)]
    pub langevin_target: LangevinTarget,
}

impl SamplerConfig {
    pub fn new(lambda: f64, n_particles: usize, seed: u64) -> Self {
        Self {
            lambda,
            n_particles,
            langevin_steps: 0,
            langevin_tau: 0.0,
            seed,
            clamp_to_domain: false,
            langevin_target: LangevinTarget::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidInput(format!("lambda = {} outside [0, 1]", self.lambda)));
        }
        if self.langevin_steps > 0 && !(self.langevin_tau > 0.0) {
            return Err(Error::InvalidInput("langevin_tau must be positive when langevin_steps > 0".into()));
        }
        Ok(())
    }
}

/// Samples and per-particle bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub d: usize,
    /// Row-major `I × d`.
    pub samples: Vec<f64>,
    /// Number of coordinate evaluations outside the domain, per particle.
    pub out_of_domain: Vec<u64>,
    /// Particles stopped because their state became non-finite.
    pub aborted: Vec<bool>,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.out_of_domain.len()
    }

    pub fn is_empty(&self) -> bool {
        self.out_of_domain.is_empty()
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        &self.samples[i * self.d..(i + 1) * self.d]
    }

    /// Writes `x1,…,xd,flags`; `flags` is the out-of-domain count, or `-1` for an
    /// aborted particle.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let header: Vec<String> = (1..=self.d).map(|k| format!("x{k}")).collect();
        writeln!(w, "{},flags", header.join(","))?;
        for i in 0..self.len() {
            let row: Vec<String> = self.particle(i).iter().map(|v| format!("{v:e}")).collect();
            let flag = if self.aborted[i] { -1 } else { self.out_of_domain[i] as i64 };
            writeln!(w, "{},{flag}", row.join(","))?;
        }
        Ok(())
    }
}

/// Run metadata written next to the samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetadata {
    pub seed: u64,
    pub lambda: f64,
    pub langevin_steps: usize,
    pub langevin_tau: f64,
    pub langevin_target: LangevinTarget,
    pub clamp_to_domain: bool,
    pub normal_transform: String,
    /// Forward-time grid whose reversal was used.
    pub grid: Vec<f64>,
    pub n_particles: usize,
    pub aborted: usize,
    pub out_of_domain_total: u64,
}

/// Basis values (or derivatives) per coordinate, cut to the snapshot degrees.
fn basis_values(snap: &SolutionSnapshot, space: &PolySpace, x: &[f64], deriv: bool) -> Vec<Vec<f64>> {
    space
        .bases()
        .iter()
        .zip(&snap.degrees)
        .zip(x)
        .map(|((b, &n), &xi)| {
            let mut v = if deriv { b.evaluate_derivative(xi) } else { b.evaluate(xi) };
            v.truncate(n + 1);
            v
        })
        .collect()
}

fn check_point(snap: &SolutionSnapshot, space: &PolySpace, x: &[f64]) {
    assert_eq!(x.len(), snap.degrees.len(), "point dimension");
    assert_eq!(space.d(), snap.degrees.len(), "space dimension");
}

/// `v(x)` for the snapshot; `space` supplies the intervals (degrees may exceed the
/// snapshot's, the basis is cut to the snapshot degrees).
pub fn eval_v(snap: &SolutionSnapshot, space: &PolySpace, x: &[f64]) -> f64 {
    check_point(snap, space, x);
    let vs = basis_values(snap, space, x, false);
    let refs: Vec<&[f64]> = vs.iter().map(|v| v.as_slice()).collect();
    snap.coeffs.contract_mode_vectors(&refs).expect("consistent snapshot")
}

/// `∇v(x)` with one left and one right sweep of cached partial contractions.
pub fn grad_v(snap: &SolutionSnapshot, space: &PolySpace, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    grad_v_into(snap, space, x, &mut GradScratch::default(), &mut out);
    out
}

/// Reusable buffers for [`grad_v_into`].
#[derive(Debug, Default)]
pub struct GradScratch {
    vals: Vec<f64>,
    ders: Vec<f64>,
    left: Vec<f64>,
    right: Vec<f64>,
    tmp: Vec<f64>,
    offsets: Vec<usize>,
    rank_offsets: Vec<usize>,
}

/// As [`grad_v`], writing into `out` and reusing `scratch` between calls.
pub fn grad_v_into(snap: &SolutionSnapshot, space: &PolySpace, x: &[f64], scratch: &mut GradScratch, out: &mut [f64]) {
    check_point(snap, space, x);
    let cores = snap.coeffs.cores();
    let d = cores.len();
    let GradScratch {
        vals,
        ders,
        left,
        right,
        tmp,
        offsets,
        rank_offsets,
    } = scratch;
    // basis values per coordinate, laid out back to back
    offsets.clear();
    offsets.push(0);
    for c in cores {
        offsets.push(offsets.last().copied().unwrap_or(0) + c.mode_size());
    }
    let total = offsets[d];
    vals.resize(total, 0.0);
    ders.resize(total, 0.0);
    for (k, b) in space.bases().iter().enumerate() {
        let n = cores[k].mode_size();
        let (o0, o1) = (offsets[k], offsets[k + 1]);
        if b.degree() + 1 == n {
            b.evaluate_into(x[k], &mut vals[o0..o1]);
            b.evaluate_derivative_into(x[k], &mut ders[o0..o1]);
        } else {
            let v = b.evaluate(x[k]);
            let dv = b.evaluate_derivative(x[k]);
            vals[o0..o1].copy_from_slice(&v[..n]);
            ders[o0..o1].copy_from_slice(&dv[..n]);
        }
    }
    // rank vectors r_0..r_d, laid out back to back
    rank_offsets.clear();
    rank_offsets.push(0);
    rank_offsets.push(1);
    for c in cores {
        rank_offsets.push(rank_offsets.last().copied().unwrap_or(0) + c.right_rank());
    }
    let rtotal = rank_offsets[d + 1];
    left.resize(rtotal, 0.0);
    right.resize(rtotal, 0.0);
    left[0] = 1.0;
    right[rtotal - 1] = 1.0;
    for k in 0..d {
        let (prev, next) = left.split_at_mut(rank_offsets[k + 1]);
        cores[k].contract_left_into(
            &prev[rank_offsets[k]..],
            &vals[offsets[k]..offsets[k + 1]],
            &mut next[..rank_offsets[k + 2] - rank_offsets[k + 1]],
        );
    }
    for k in (0..d).rev() {
        let (prev, next) = right.split_at_mut(rank_offsets[k + 1]);
        cores[k].contract_right_into(
            &next[..rank_offsets[k + 2] - rank_offsets[k + 1]],
            &vals[offsets[k]..offsets[k + 1]],
            &mut prev[rank_offsets[k]..],
        );
    }
    for k in 0..d {
        let r1 = rank_offsets[k + 2] - rank_offsets[k + 1];
        tmp.resize(r1, 0.0);
        cores[k].contract_left_into(
            &left[rank_offsets[k]..rank_offsets[k + 1]],
            &ders[offsets[k]..offsets[k + 1]],
            tmp,
        );
        out[k] = tmp.iter().zip(&right[rank_offsets[k + 1]..rank_offsets[k + 2]]).map(|(a, b)| a * b).sum();
    }
}

/// Number of coordinates of `x` outside the domain of `space`.
pub fn out_of_domain_count(space: &PolySpace, x: &[f64]) -> u64 {
    space.bases().iter().zip(x).filter(|(b, &xi)| !b.contains(xi)).count() as u64
}

/// `‖Q − I/2‖_F / ‖I/2‖_F` for the quadratic coefficient matrix `Q` of the snapshot.
pub fn covariance_error(snap: &SolutionSnapshot, base: &PolySpace) -> Result<f64> {
    let space = snap.space(base)?;
    let quad = extract_quadratic(&snap.coeffs, &space)?;
    let d = snap.degrees.len();
    let mut num = 0.0;
    for i in 0..d {
        for j in 0..d {
            let target = if i == j { 0.5 } else { 0.0 };
            let e = quad.q_entry(i, j) - target;
            num += e * e;
        }
    }
    Ok(num.sqrt() / (0.25 * d as f64).sqrt())
}

/// Gradient of a time-dependent potential `v_t` at forward time `t`.
pub trait ScoreField: Sync {
    fn dim(&self) -> usize;

    /// Writes `∇v_t(x)` into `out` and returns the number of out-of-domain
    /// coordinate evaluations it performed.
    fn grad(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<u64>;

    /// Domain used for clamping, if any.
    fn domain(&self) -> Option<Vec<(f64, f64)>> {
        None
    }
}

thread_local! {
    static SCRATCH: std::cell::RefCell<GradScratch> = std::cell::RefCell::new(GradScratch::default());
}

/// Scores of a solver trajectory at a fixed set of forward times.
pub struct TrajectoryScore {
    space: PolySpace,
    times: Vec<f64>,
    snapshots: Vec<(SolutionSnapshot, PolySpace)>,
}

impl TrajectoryScore {
    /// Prepares snapshots at `times` (stored ones directly, others via a bridging
    /// Euler step).
    pub fn new(traj: &Trajectory, times: &[f64], cfg: &SolverConfig) -> Result<Self> {
        let mut sorted: Vec<f64> = times.to_vec();
        sorted.sort_by(f64::total_cmp);
        sorted.dedup();
        let snapshots = sorted
            .iter()
            .map(|&t| {
                let s = evaluate_at_time(traj, t, cfg)?;
                let sp = s.space(&traj.space)?;
                Ok((s, sp))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            space: traj.space.clone(),
            times: sorted,
            snapshots,
        })
    }

    fn lookup(&self, t: f64) -> Result<&(SolutionSnapshot, PolySpace)> {
        match self.times.binary_search_by(|p| p.total_cmp(&t)) {
            Ok(i) => Ok(&self.snapshots[i]),
            Err(_) => Err(Error::InvalidInput(format!("no prepared snapshot at t = {t}"))),
        }
    }
}

impl ScoreField for TrajectoryScore {
    fn dim(&self) -> usize {
        self.space.d()
    }

    fn grad(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<u64> {
        let (snap, sp) = self.lookup(t)?;
        SCRATCH.with(|s| grad_v_into(snap, sp, x, &mut s.borrow_mut(), out));
        Ok(out_of_domain_count(sp, x))
    }

    fn domain(&self) -> Option<Vec<(f64, f64)>> {
        Some(self.space.intervals())
    }
}

/// Per-particle normal stream.
fn particle_rng(seed: u64, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    rng
}

fn clamp(z: &mut [f64], domain: &Option<Vec<(f64, f64)>>) {
    if let Some(dom) = domain {
        for (zi, &(a, b)) in z.iter_mut().zip(dom) {
            *zi = zi.clamp(a, b);
        }
    }
}

/// One particle along the reversed grid; returns (out-of-domain count, aborted).
fn run_particle(
    score: &dyn ScoreField,
    forward_times: &[f64],
    scfg: &SamplerConfig,
    domain: &Option<Vec<(f64, f64)>>,
    index: usize,
    z: &mut [f64],
) -> Result<(u64, bool)> {
    let d = z.len();
    let mut rng = particle_rng(scfg.seed, index);
    for zi in z.iter_mut() {
        *zi = StandardNormal.sample(&mut rng);
    }
    let mut g = vec![0.0; d];
    let mut ood = 0;
    let n_steps = forward_times.len() - 1;
    let noise = (2.0 * (1.0 - scfg.lambda)).sqrt();
    for n in 0..n_steps {
        // reverse time s_n = T − t_{N−n}; the score is taken at forward time t_{N−n}
        let t_from = forward_times[n_steps - n];
        let t_to = forward_times[n_steps - n - 1];
        let tau = t_from - t_to;
        ood += score.grad(t_from, z, &mut g)?;
        let sq = (tau).sqrt() * noise;
        for k in 0..d {
            let mut step = (z[k] - (2.0 - scfg.lambda) * g[k]) * tau;
            if scfg.lambda < 1.0 {
                let xi: f64 = StandardNormal.sample(&mut rng);
                step += sq * xi;
            }
            z[k] += step;
        }
        if scfg.clamp_to_domain {
            clamp(z, domain);
        }
        if scfg.langevin_steps > 0 {
            let t_target = match scfg.langevin_target {
                LangevinTarget::PostStep => t_to,
                LangevinTarget::PreStep => t_from,
            };
            let lt = scfg.langevin_tau;
            let ls = (2.0 * lt).sqrt();
            for _ in 0..scfg.langevin_steps {
                ood += score.grad(t_target, z, &mut g)?;
                for k in 0..d {
                    let xi: f64 = StandardNormal.sample(&mut rng);
                    z[k] += -lt * g[k] + ls * xi;
                }
                if scfg.clamp_to_domain {
                    clamp(z, domain);
                }
            }
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Ok((ood, true));
        }
    }
    Ok((ood, false))
}

/// Reverse sampling along the reversal of an arbitrary increasing forward grid
/// `0 = t_0 < … < t_N = T`.
pub fn reverse_sample_on_grid(score: &dyn ScoreField, forward_times: &[f64], scfg: &SamplerConfig) -> Result<SampleBatch> {
    scfg.validate()?;
    if forward_times.is_empty() || forward_times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidInput("forward grid must be non-empty and strictly increasing".into()));
    }
    let d = score.dim();
    let domain = score.domain();
    let n = scfg.n_particles;
    let mut samples = vec![0.0; n * d];
    let results: Vec<Result<(u64, bool)>> = samples
        .par_chunks_mut(d.max(1))
        .enumerate()
        .map(|(i, z)| run_particle(score, forward_times, scfg, &domain, i, z))
        .collect();
    let mut out_of_domain = Vec::with_capacity(n);
    let mut aborted = Vec::with_capacity(n);
    for r in results {
        let (o, a) = r?;
        out_of_domain.push(o);
        aborted.push(a);
    }
    let flagged = aborted.iter().filter(|&&a| a).count();
    if flagged * 10 > n {
        return Err(Error::SamplerAbort { flagged, total: n });
    }
    Ok(SampleBatch {
        d,
        samples,
        out_of_domain,
        aborted,
    })
}

/// Reverse sampling with the scores of a complete solver trajectory, on the
/// reversed solver grid.
pub fn reverse_sample(traj: &Trajectory, scfg: &SamplerConfig, cfg: &SolverConfig) -> Result<SampleBatch> {
    if !traj.is_complete(cfg.t_final) {
        return Err(Error::InvalidInput("trajectory does not reach T".into()));
    }
    let times = traj.times();
    let score = TrajectoryScore::new(traj, &times, cfg)?;
    reverse_sample_on_grid(&score, &times, scfg)
}

/// Metadata for a batch produced on `grid`.
pub fn metadata(batch: &SampleBatch, scfg: &SamplerConfig, grid: &[f64]) -> SampleMetadata {
    SampleMetadata {
        seed: scfg.seed,
        lambda: scfg.lambda,
        langevin_steps: scfg.langevin_steps,
        langevin_tau: scfg.langevin_tau,
        langevin_target: scfg.langevin_target,
        clamp_to_domain: scfg.clamp_to_domain,
        normal_transform: NORMAL_TRANSFORM.into(),
        grid: grid.to_vec(),
        n_particles: batch.len(),
        aborted: batch.aborted.iter().filter(|&&a| a).count(),
        out_of_domain_total: batch.out_of_domain.iter().sum(),
    }
}
