// SPDX-License-Identifier: MIT OR Apache-2.0

//! Command-line front end: `solve`, `sample` and `verify`.
//!
//! * `solve <config.json>` writes `diagnostics.jsonl`, one `snapshot_<step>.ttck`
//!   checkpoint per stored step and `manifest.json` into the configured output
//!   directory. Exit code 0 on success, 2 when the solver aborts (partial outputs
//!   are kept), 1 on configuration or I/O errors.
//! * `sample <manifest.json>` writes `samples.csv` and `samples_meta.json` next to
//!   the manifest.
//! * `verify <gaussian|operators|eigen|quadrature>` runs an oracle suite and prints
//!   one line per check.
//!
//! `TTHJB_THREADS` sets the worker-thread count (default 1).

mod verify;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::hjb_operators::{build_potential_tt, PotentialSpec};
use crate::integrator::{solve_hjb_with, SolutionSnapshot, SolverAbort, SolverConfig, Trajectory};
use crate::poly_basis::{PolySpace, MAX_DEGREE};
use crate::sampler::{metadata, reverse_sample, SamplerConfig};
use crate::tt_core::checkpoint;

pub use verify::{diagonal_snapshot, run_suite, Check, SUITES};

/// Relative tolerance used when summing the potential's monomials into a TT.
const POTENTIAL_ROUNDING: f64 = 1e-14;

/// Discretization block of a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceConfig {
    pub dims: usize,
    pub intervals: Vec<(f64, f64)>,
    pub degrees: Vec<usize>,
}

/// Full run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub space: SpaceConfig,
    pub potential: PotentialSpec,
    pub solver: SolverConfig,
    #[serde(default)]
    pub sampler: Option<SamplerConfig>,
    pub output_dir: PathBuf,
    /// Write a checkpoint every `snapshot_stride` steps (first and last always).
    #[serde(default = "one")]
    pub snapshot_stride: usize,
}

fn one() -> usize {
    1
}

impl RunConfig {
    /// Parses and validates; errors carry the JSON line and column.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Format(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.space;
        if s.dims == 0 || s.intervals.len() != s.dims || s.degrees.len() != s.dims {
            return Err(Error::InvalidInput(format!(
                "space: dims = {} needs exactly that many intervals ({}) and degrees ({})",
                s.dims,
                s.intervals.len(),
                s.degrees.len()
            )));
        }
        if let Some(&n) = s.degrees.iter().find(|&&n| n > MAX_DEGREE) {
            return Err(Error::InvalidInput(format!("space: degree {n} exceeds {MAX_DEGREE}")));
        }
        if let Some(&(a, b)) = s.intervals.iter().find(|(a, b)| !(a < b)) {
            return Err(Error::InvalidInput(format!("space: interval [{a}, {b}] is not well-ordered")));
        }
        if self.snapshot_stride == 0 {
            return Err(Error::InvalidInput("snapshot_stride must be ≥ 1".into()));
        }
        self.solver.validate()?;
        if let Some(sc) = &self.sampler {
            sc.validate()?;
        }
        Ok(())
    }

    pub fn poly_space(&self) -> Result<PolySpace> {
        PolySpace::new(&self.space.intervals, &self.space.degrees)
    }
}

/// Rejects potentials that cannot define a normalizable density: every coordinate
/// needs a pure even power `x_i^{2k}` (`k ≥ 1`) with positive coefficient.
pub fn check_potential_floor(spec: &PotentialSpec, d: usize) -> Result<()> {
    let poly = spec.expand(d)?;
    for i in 0..d {
        let ok = poly.iter().any(|(e, &c)| {
            c > 0.0 && e[i] >= 2 && e[i] % 2 == 0 && e.iter().enumerate().all(|(j, &p)| j == i || p == 0)
        });
        if !ok {
            return Err(Error::InvalidInput(format!(
                "potential: initial condition must be a valid density potential; coordinate {i} has no positive even power"
            )));
        }
    }
    Ok(())
}

/// Output manifest of a solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// SHA-256 of the configuration file bytes.
    pub config_hash: String,
    pub config: RunConfig,
    pub times: Vec<f64>,
    pub files: Vec<String>,
    pub diagnostics: String,
    pub final_time: f64,
    pub final_ranks: Vec<usize>,
    pub final_degrees: Vec<usize>,
    pub complete: bool,
    pub abort: Option<SolverAbort>,
}

/// Hex SHA-256 of `bytes`.
pub fn config_hash(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Outcome of a solve driven from a configuration.
pub struct SolveOutcome {
    pub manifest: Manifest,
    pub trajectory: Trajectory,
}

/// Runs the solver for a configuration, streaming checkpoints and diagnostics into
/// `cfg.output_dir`.
pub fn solve_to_dir(cfg: &RunConfig, config_bytes: &[u8]) -> Result<SolveOutcome> {
    let space = cfg.poly_space()?;
    check_potential_floor(&cfg.potential, space.d())?;
    let phi = build_potential_tt(&cfg.potential, &space, POTENTIAL_ROUNDING)?;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir)?;
    let mut diag = BufWriter::new(File::create(dir.join("diagnostics.jsonl"))?);
    let mut files = Vec::new();
    let mut times = Vec::new();
    let mut pending: Option<(usize, SolutionSnapshot)> = None;
    let stride = cfg.snapshot_stride;
    let t_final = cfg.solver.t_final;
    let write_snap = |step: usize, s: &SolutionSnapshot, files: &mut Vec<String>, times: &mut Vec<f64>| -> Result<()> {
        let name = format!("snapshot_{step}.ttck");
        checkpoint::write_file(&dir.join(&name), &s.coeffs, s.t)?;
        files.push(name);
        times.push(s.t);
        Ok(())
    };
    let mut step = 0usize;
    let traj = solve_hjb_with(&phi, &space, &cfg.solver, &mut |s, d| {
        if let Some(d) = d {
            serde_json::to_writer(&mut diag, d).map_err(|e| Error::Format(e.to_string()))?;
            diag.write_all(b"\n")?;
            diag.flush()?;
            step = d.step + 1;
        }
        if step % stride == 0 || s.t == t_final {
            write_snap(step, s, &mut files, &mut times)?;
            pending = None;
        } else {
            pending = Some((step, s.clone()));
        }
        Ok(())
    })?;
    // an aborted run keeps its last accepted state on disk
    if let Some((step, s)) = pending {
        write_snap(step, &s, &mut files, &mut times)?;
    }
    let last = traj.final_snapshot();
    let manifest = Manifest {
        config_hash: config_hash(config_bytes),
        config: cfg.clone(),
        times,
        files,
        diagnostics: "diagnostics.jsonl".into(),
        final_time: last.t,
        final_ranks: last.ranks(),
        final_degrees: last.degrees.clone(),
        complete: traj.is_complete(t_final),
        abort: traj.abort.clone(),
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(dir.join("manifest.json"), text + "\n")?;
    Ok(SolveOutcome {
        manifest,
        trajectory: traj,
    })
}

/// Reconstructs the stored trajectory of a manifest.
pub fn load_trajectory(manifest: &Manifest, dir: &Path) -> Result<Trajectory> {
    let space = manifest.config.poly_space()?;
    let mut snapshots = Vec::with_capacity(manifest.files.len());
    for f in &manifest.files {
        let (tt, t) = checkpoint::read_file(&dir.join(f))?;
        snapshots.push(SolutionSnapshot::new(t, tt));
    }
    let first = snapshots
        .first()
        .ok_or_else(|| Error::Format("manifest lists no snapshots".into()))?;
    Ok(Trajectory {
        initial_ranks: first.ranks(),
        space,
        snapshots,
        diagnostics: Vec::new(),
        abort: manifest.abort.clone(),
    })
}

/// Overrides accepted by `sample`.
#[derive(Debug, Clone, Default)]
pub struct SamplerOverrides {
    pub particles: Option<usize>,
    pub lambda: Option<f64>,
    pub langevin_steps: Option<usize>,
    pub langevin_tau: Option<f64>,
    pub seed: Option<u64>,
}

fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("manifest: {e}")))
}

/// `solve`: returns the process exit code.
pub fn cmd_solve(config_path: &Path) -> i32 {
    let bytes = match fs::read(config_path) {
        Ok(b) => b,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", config_path.display());
            return 1;
        }
    };
    let cfg = match std::str::from_utf8(&bytes)
        .map_err(|e| Error::Format(format!("config is not UTF-8: {e}")))
        .and_then(RunConfig::from_json)
    {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}: {e}", config_path.display());
            return 1;
        }
    };
    match solve_to_dir(&cfg, &bytes) {
        Ok(out) => {
            let m = &out.manifest;
            println!(
                "solved to t = {} in {} steps; final ranks {:?}, degrees {:?}",
                m.final_time,
                out.trajectory.diagnostics.len(),
                m.final_ranks,
                m.final_degrees
            );
            if let Some(a) = &m.abort {
                eprintln!("solver aborted at t = {}: {}", a.t, a.message);
                2
            } else {
                0
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// `sample`: returns the process exit code.
pub fn cmd_sample(manifest_path: &Path, overrides: &SamplerOverrides) -> i32 {
    let run = || -> Result<i32> {
        let manifest = read_manifest(manifest_path)?;
        if !manifest.complete {
            return Err(Error::InvalidInput("manifest describes an incomplete solve".into()));
        }
        let dir = manifest_path.parent().unwrap_or(Path::new("."));
        let traj = load_trajectory(&manifest, dir)?;
        let mut scfg = manifest.config.sampler.clone().unwrap_or_else(|| SamplerConfig::new(0.0, 1000, 0));
        if let Some(v) = overrides.particles {
            scfg.n_particles = v;
        }
        if let Some(v) = overrides.lambda {
            scfg.lambda = v;
        }
        if let Some(v) = overrides.langevin_steps {
            scfg.langevin_steps = v;
        }
        if let Some(v) = overrides.langevin_tau {
            scfg.langevin_tau = v;
        }
        if let Some(v) = overrides.seed {
            scfg.seed = v;
        }
        let batch = match reverse_sample(&traj, &scfg, &manifest.config.solver) {
            Ok(b) => b,
            Err(e @ Error::SamplerAbort { .. }) => {
                eprintln!("sampler aborted: {e}");
                return Ok(2);
            }
            Err(e) => return Err(e),
        };
        let mut w = BufWriter::new(File::create(dir.join("samples.csv"))?);
        batch.write_csv(&mut w)?;
        w.flush()?;
        let meta = metadata(&batch, &scfg, &traj.times());
        let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(dir.join("samples_meta.json"), text + "\n")?;
        println!("wrote {} samples to {}", batch.len(), dir.join("samples.csv").display());
        Ok(0)
    };
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// `verify`: returns the process exit code.
pub fn cmd_verify(suite: &str) -> i32 {
    match run_suite(suite) {
        Some(Ok(checks)) => {
            println!("{:<48} {:>14} {:>14}  result", "check", "value", "threshold");
            for c in &checks {
                println!(
                    "{:<48} {:>14.6e} {:>14.6e}  {}",
                    c.name,
                    c.value,
                    c.threshold,
                    if c.pass { "PASS" } else { "FAIL" }
                );
            }
            if checks.iter().all(|c| c.pass) {
                0
            } else {
                1
            }
        }
        Some(Err(e)) => {
            eprintln!("error: {e}");
            1
        }
        None => {
            eprintln!("unknown suite '{suite}'\nusage: tthjb verify <{}>", SUITES.join("|"));
            1
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "tthjb", version, about = "Tensor-train HJB solver and score-based sampler")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the HJB equation for a run configuration.
    Solve { config: PathBuf },
    /// Draw samples from a solved trajectory.
    Sample {
        manifest: PathBuf,
        #[arg(long)]
        particles: Option<usize>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long = "langevin-steps")]
        langevin_steps: Option<usize>,
        #[arg(long = "langevin-tau")]
        langevin_tau: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run an oracle suite (gaussian, operators, eigen, quadrature).
    Verify { suite: String },
}

/// Worker threads from `TTHJB_THREADS` (default 1).
pub fn thread_count() -> usize {
    std::env::var("TTHJB_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n: &usize| n >= 1)
        .unwrap_or(1)
}

/// Entry point of the binary; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(thread_count()).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker threads: {e}");
            return 1;
        }
    };
    pool.install(|| match cli.command {
        Command::Solve { config } => cmd_solve(&config),
        Command::Sample {
            manifest,
            particles,
            lambda,
            langevin_steps,
            langevin_tau,
            seed,
        } => cmd_sample(
            &manifest,
            &SamplerOverrides {
                particles,
                lambda,
                langevin_steps,
                langevin_tau,
                seed,
            },
        ),
        Command::Verify { suite } => cmd_verify(&suite),
    })
}
